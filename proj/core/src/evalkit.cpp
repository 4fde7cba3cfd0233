#include "lfr/evalkit.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>

#include <torch/torch.h>

#include "lfr/convert.hpp"
#include "lfr/errors.hpp"
#include "lfr/io.hpp"
#include "lfr/plots.hpp"
#include "lfr/rng.hpp"
#include "lfr/trainer.hpp"

namespace lfr::eval {

namespace fs = std::filesystem;

namespace {

int worker_count(int threads, std::size_t jobs) {
  int n = threads > 0 ? threads : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  return static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(n), std::max<std::size_t>(1, jobs)));
}

// Calls fn(i) for i in [0, n) on a few threads. The first exception is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn fn) {
  const int workers = worker_count(threads, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::string failure_kind(const MatcherError& e) {
  if (dynamic_cast<const MatcherTimeout*>(&e) != nullptr) return "timeout";
  if (dynamic_cast<const UnparseableOutput*>(&e) != nullptr) return "unparseable";
  if (dynamic_cast<const MatcherFailure*>(&e) != nullptr) return "matcher_failure";
  return "matcher_error";
}

std::string slug(const std::string& name) {
  std::string s;
  for (char c : name) {
    if (std::isalnum(static_cast<unsigned char>(c)) != 0) {
      s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    } else if (c == '+') {
      s += "_plus_";
    } else {
      s += '_';
    }
  }
  return s;
}

std::string csv_field(std::string s) {
  for (auto& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  if (s.find_first_of(",\"") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

}  // namespace

Plane mask_ridge(const MapStack& stack, float seg_threshold) {
  Plane out(stack.height(), stack.width());
  for (int y = 0; y < out.height(); ++y) {
    for (int x = 0; x < out.width(); ++x) {
      out.at(y, x) = stack.segmentation().at(y, x) >= seg_threshold ? stack.ridge().at(y, x) : 0.0f;
    }
  }
  return out;
}

FingerprintImage ridge_image(const Plane& masked_ridge) {
  FingerprintImage img;
  img.pixels = Plane(masked_ridge.height(), masked_ridge.width());
  for (int y = 0; y < masked_ridge.height(); ++y) {
    for (int x = 0; x < masked_ridge.width(); ++x) {
      img.pixels.at(y, x) = 1.0f - std::clamp(masked_ridge.at(y, x), 0.0f, 1.0f);
    }
  }
  return img;
}

std::vector<Reconstruction> reconstruct(const std::vector<FingerprintImage>& latents, nets::Generator& generator,
                                        int batch_size) {
  if (batch_size <= 0) throw ValidationError("reconstruct batch_size must be positive");
  generator->eval();
  torch::NoGradGuard guard;
  std::vector<Reconstruction> out;
  out.reserve(latents.size());
  for (std::size_t start = 0; start < latents.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(latents.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<torch::Tensor> rows;
    for (std::size_t i = start; i < end; ++i) rows.push_back(to_tensor(latents[i].pixels));
    const auto stacks = generator->forward(torch::stack(rows));
    for (std::int64_t i = 0; i < stacks.size(0); ++i) {
      Reconstruction r;
      r.stack = stack_from_tensor(stacks[i]);
      r.masked_ridge = mask_ridge(r.stack);
      out.push_back(std::move(r));
    }
  }
  return out;
}

Reconstruction reconstruct(const FingerprintImage& latent, nets::Generator& generator) {
  return std::move(reconstruct(std::vector<FingerprintImage>{latent}, generator, 1).front());
}

Reconstruction reconstruct(const FingerprintImage& latent, const fs::path& g_ckpt) {
  auto g = train::load_generator(g_ckpt);
  return reconstruct(latent, g);
}

void ScoreMatrix::validate() const {
  if (scores.size() != probes * gallery) throw ValidationError("score matrix size does not match its dimensions");
  if (probe_labels.size() != probes || gallery_labels.size() != gallery) {
    throw ValidationError("score matrix label arrays do not match its dimensions");
  }
  if (!excluded.empty() && excluded.size() != scores.size()) throw ValidationError("exclusion mask has the wrong size");
  for (double s : scores) {
    if (!std::isfinite(s)) throw ValidationError("score matrix holds a non-finite value");
  }
}

double CMCResult::at_rank(int k) const {
  if (rank_accuracies.empty()) return 0.0;
  const int n = static_cast<int>(rank_accuracies.size());
  return rank_accuracies[static_cast<std::size_t>(std::clamp(k, 1, n) - 1)];
}

CMCResult cmc(const ScoreMatrix& m) {
  m.validate();
  CMCResult r;
  r.ranks.assign(m.probes, 0);
  r.rank_accuracies.assign(m.gallery, 0.0);
  std::vector<std::size_t> order;
  std::vector<int> counts(m.gallery + 1, 0);
  int included = 0;
  for (std::size_t p = 0; p < m.probes; ++p) {
    order.clear();
    bool has_mate = false;
    for (std::size_t g = 0; g < m.gallery; ++g) {
      if (m.is_excluded(p, g)) continue;
      order.push_back(g);
      has_mate = has_mate || m.gallery_labels[g] == m.probe_labels[p];
    }
    if (!has_mate) {
      ++r.excluded_probes;
      continue;
    }
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return m.at(p, a) > m.at(p, b); });
    for (std::size_t i = 0; i < order.size(); ++i) {
      if (m.gallery_labels[order[i]] == m.probe_labels[p]) {
        r.ranks[p] = static_cast<int>(i + 1);
        break;
      }
    }
    ++counts[static_cast<std::size_t>(r.ranks[p])];
    ++included;
  }
  if (included > 0) {
    int cumulative = 0;
    for (std::size_t k = 1; k <= m.gallery; ++k) {
      cumulative += counts[k];
      r.rank_accuracies[k - 1] = static_cast<double>(cumulative) / included;
    }
  }
  return r;
}

std::string to_string(FailurePolicy p) { return p == FailurePolicy::kZero ? "zero" : "exclude"; }

FailurePolicy failure_policy_from_string(const std::string& s) {
  if (s == "zero") return FailurePolicy::kZero;
  if (s == "exclude") return FailurePolicy::kExclude;
  throw ConfigError("unknown failure policy '" + s + "' (expected zero or exclude)");
}

ScoreOutcome score_all(std::size_t probes, std::size_t gallery, const std::vector<int>& probe_labels,
                       const std::vector<int>& gallery_labels, const PairScorer& scorer, FailurePolicy policy,
                       int threads) {
  if (probes == 0 || gallery == 0) throw ValidationError("score_all needs non-empty probe and gallery sets");
  ScoreOutcome out;
  auto& m = out.matrix;
  m.probes = probes;
  m.gallery = gallery;
  m.probe_labels = probe_labels;
  m.gallery_labels = gallery_labels;
  m.scores.assign(probes * gallery, 0.0);
  std::vector<std::optional<PairFailure>> failed(probes * gallery);
  parallel_for(probes * gallery, threads, [&](std::size_t i) {
    const std::size_t p = i / gallery;
    const std::size_t g = i % gallery;
    try {
      const double s = scorer(p, g);
      if (!std::isfinite(s)) throw UnparseableOutput("non-finite score", std::to_string(s));
      m.scores[i] = s;
    } catch (const MissingExecutable&) {
      throw;
    } catch (const MatcherError& e) {
      failed[i] = PairFailure{p, g, failure_kind(e), e.what()};
    }
  });
  for (std::size_t i = 0; i < failed.size(); ++i) {
    if (!failed[i]) continue;
    if (policy == FailurePolicy::kExclude) {
      if (m.excluded.empty()) m.excluded.assign(m.scores.size(), 0);
      m.excluded[i] = 1;
    }
    out.failures.push_back(std::move(*failed[i]));
  }
  m.validate();
  return out;
}

ScoreOutcome score_all(const std::vector<match::Template>& probes, const std::vector<int>& probe_labels,
                       const std::vector<match::Template>& gallery, const std::vector<int>& gallery_labels,
                       const match::MatchOptions& opts, int threads) {
  if (probes.empty() || gallery.empty()) throw ValidationError("score_all needs non-empty probe and gallery sets");
  std::vector<std::optional<match::PreparedTemplate>> prepared(gallery.size());
  parallel_for(gallery.size(), threads, [&](std::size_t g) { prepared[g].emplace(gallery[g], opts); });

  ScoreOutcome out;
  auto& m = out.matrix;
  m.probes = probes.size();
  m.gallery = gallery.size();
  m.probe_labels = probe_labels;
  m.gallery_labels = gallery_labels;
  m.scores.assign(m.probes * m.gallery, 0.0);
  std::vector<std::uint8_t> empty(m.scores.size(), 0);
  parallel_for(m.scores.size(), threads, [&](std::size_t i) {
    const auto r = match::match_internal(probes[i / m.gallery], *prepared[i % m.gallery]);
    m.scores[i] = r.score;
    empty[i] = r.empty_overlap ? 1 : 0;
  });
  for (std::size_t i = 0; i < empty.size(); ++i) {
    if (empty[i] != 0) out.failures.push_back({i / m.gallery, i % m.gallery, "empty_overlap", "no common foreground"});
  }
  m.validate();
  return out;
}

QualityComponents quality_components(const FingerprintImage& img, const mapextract::ExtractOptions& opts) {
  const auto orientation = mapextract::estimate_orientation(img, opts.block_size);
  const auto frequency = mapextract::estimate_frequency(img, orientation, opts);
  const auto seg = mapextract::segment(img, orientation, opts);
  QualityComponents q;
  const auto& fg = seg.foreground;
  double n_fg = 0.0;
  double coh = 0.0;
  double valid = 0.0;
  for (int r = 0; r < fg.rows; ++r) {
    for (int c = 0; c < fg.cols; ++c) {
      if (fg.at(r, c) < 0.5f) continue;
      n_fg += 1.0;
      coh += orientation.coherence.at(r, c);
      valid += frequency.frequency.at(r, c) > 0.0f ? 1.0 : 0.0;
    }
  }
  const double blocks = static_cast<double>(fg.rows) * fg.cols;
  if (blocks <= 0.0 || n_fg <= 0.0) return q;
  q.foreground = n_fg / blocks;
  q.coherence = coh / n_fg;
  q.valid_frequency = valid / n_fg;
  q.composite = q.foreground * q.coherence * q.valid_frequency;
  return q;
}

int quality_bin(double composite) {
  for (int i = 0; i < 4; ++i) {
    if (composite >= kQualityThresholds[i]) return i + 1;
  }
  return 5;
}

int quality_score(const FingerprintImage& img, const mapextract::ExtractOptions& opts) {
  return quality_bin(quality_components(img, opts).composite);
}

int quality_score(const MapStack& stack, const mapextract::ExtractOptions& opts) {
  return quality_score(ridge_image(mask_ridge(stack)), opts);
}

std::string to_string(Protocol p) {
  switch (p) {
    case Protocol::kLatentToClean: return "latent_to_clean";
    case Protocol::kLatentToLatent: return "latent_to_latent";
    case Protocol::kQuality: return "quality";
  }
  return "?";
}

Protocol protocol_from_string(const std::string& s) {
  if (s == "latent_to_clean") return Protocol::kLatentToClean;
  if (s == "latent_to_latent") return Protocol::kLatentToLatent;
  if (s == "quality") return Protocol::kQuality;
  throw ConfigError("unknown protocol '" + s + "' (expected latent_to_clean, latent_to_latent or quality)");
}

mapextract::ExtractOptions extract_options_for(const synth::DatasetManifest& manifest) {
  mapextract::ExtractOptions opts;
  std::ifstream in(manifest.root / "dataset.json");
  if (!in) return opts;
  const auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) return opts;
  if (j.contains("block_size")) opts.block_size = j["block_size"].get<int>();
  if (j.contains("var_threshold")) opts.var_threshold = j["var_threshold"].get<double>();
  return opts;
}

nlohmann::json ExperimentReport::to_json() const {
  nlohmann::json j;
  j["matching"] = nlohmann::json::array();
  for (const auto& p : matching) {
    nlohmann::json pj{{"protocol", eval::to_string(p.protocol)}, {"rows", nlohmann::json::array()}};
    for (const auto& r : p.rows) {
      nlohmann::json ranks;
      for (int k : this->ranks) ranks[std::to_string(k)] = r.cmc.at_rank(k);
      pj["rows"].push_back({{"name", r.name},
                            {"probes", r.probes},
                            {"gallery", r.gallery},
                            {"failures", r.failures},
                            {"excluded_probes", r.cmc.excluded_probes},
                            {"rank", ranks},
                            {"cmc", r.cmc.rank_accuracies}});
    }
    j["matching"].push_back(pj);
  }
  j["quality"] = nlohmann::json::array();
  for (const auto& q : quality) j["quality"].push_back({{"name", q.name}, {"histogram", q.histogram}, {"mean", q.mean}});
  return j;
}

namespace {

// One probe-side representation of the split: raw latents or one generator's output.
struct Side {
  std::string name;
  std::vector<match::Template> templates;
  std::vector<fs::path> files;   // what external tools read
  std::vector<FingerprintImage> images;  // what the quality proxy reads
};

}  // namespace

ExperimentReport run_experiment(const synth::DatasetManifest& manifest, const ExperimentConfig& cfg,
                                const fs::path& out_dir) {
  const auto idx = manifest.indices(cfg.split);
  if (idx.empty()) throw ValidationError("split " + synth::to_string(cfg.split) + " has no records");
  if (!cfg.include_raw && cfg.generators.empty()) throw ConfigError("experiment has no rows to evaluate");
  if (!(cfg.latent_gallery_fraction > 0.0 && cfg.latent_gallery_fraction < 1.0)) {
    throw ConfigError("config field 'latent_gallery_fraction' must lie in (0, 1)");
  }
  for (int k : cfg.report_ranks) {
    if (k < 1) throw ConfigError("config field 'report_ranks' must hold positive ranks");
  }
  if (cfg.external_matcher) cfg.external_matcher->validate();
  if (cfg.external_quality) cfg.external_quality->validate();
  const auto extract = extract_options_for(manifest);
  fs::create_directories(out_dir);

  std::vector<FingerprintImage> latents(idx.size());
  std::vector<int> labels(idx.size());
  parallel_for(idx.size(), cfg.threads, [&](std::size_t i) {
    latents[i] = io::read_png(manifest.resolve(manifest.records[idx[i]].latent));
    labels[i] = manifest.records[idx[i]].finger_id;
  });

  std::vector<Side> sides;
  if (cfg.include_raw) {
    Side raw;
    raw.name = "raw";
    raw.templates.resize(idx.size());
    parallel_for(idx.size(), cfg.threads, [&](std::size_t i) {
      raw.templates[i] = match::make_template(mapextract::make_target_stack(latents[i], extract));
    });
    for (auto r : idx) raw.files.push_back(manifest.resolve(manifest.records[r].latent));
    raw.images = latents;
    sides.push_back(std::move(raw));
  }
  for (const auto& row : cfg.generators) {
    auto g = train::load_generator(row.checkpoint);
    const auto recon = reconstruct(latents, g);
    Side s;
    s.name = row.name;
    const fs::path dir = out_dir / "reconstructions" / slug(row.name);
    fs::create_directories(dir);
    for (std::size_t i = 0; i < recon.size(); ++i) {
      s.templates.push_back(match::make_template(recon[i].stack));
      s.images.push_back(ridge_image(recon[i].masked_ridge));
      s.files.push_back(dir / fs::path(manifest.records[idx[i]].latent).filename());
      io::write_png(s.files.back(), s.images.back().pixels);
    }
    sides.push_back(std::move(s));
  }

  ExperimentReport report;
  report.ranks = cfg.report_ranks;
  std::ofstream failures_csv(out_dir / "failures.csv", std::ios::trunc);
  failures_csv << "protocol,row,probe,gallery,kind,message\n";

  auto score = [&](const Side& side, const std::vector<std::size_t>& probe_rows,
                   const std::vector<match::Template>& gallery_templates, const std::vector<fs::path>& gallery_files,
                   const std::vector<int>& gallery_labels, Protocol protocol) {
    std::vector<int> probe_labels;
    for (auto i : probe_rows) probe_labels.push_back(labels[i]);
    ScoreOutcome outcome;
    if (cfg.external_matcher) {
      outcome = score_all(
          probe_rows.size(), gallery_labels.size(), probe_labels, gallery_labels,
          [&](std::size_t p, std::size_t g) {
            return proc::match_external(side.files[probe_rows[p]], gallery_files[g], *cfg.external_matcher);
          },
          cfg.failure_policy, cfg.threads);
    } else {
      std::vector<match::Template> probe_templates;
      for (auto i : probe_rows) probe_templates.push_back(side.templates[i]);
      outcome = score_all(probe_templates, probe_labels, gallery_templates, gallery_labels, cfg.match, cfg.threads);
    }
    for (const auto& f : outcome.failures) {
      failures_csv << to_string(protocol) << ',' << csv_field(side.name) << ',' << f.probe << ',' << f.gallery << ','
                   << f.kind << ',' << csv_field(f.message) << '\n';
    }
    ExperimentRow row;
    row.name = side.name;
    row.cmc = cmc(outcome.matrix);
    row.probes = probe_rows.size();
    row.gallery = gallery_labels.size();
    row.failures = outcome.failures.size();
    return row;
  };

  std::vector<std::size_t> all_rows(idx.size());
  std::iota(all_rows.begin(), all_rows.end(), 0);

  for (const auto protocol : cfg.protocols) {
    if (protocol == Protocol::kQuality) continue;
    ProtocolReport pr;
    pr.protocol = protocol;
    if (protocol == Protocol::kLatentToClean) {
      // Gallery: every distinct clean impression of the split, in manifest order.
      std::vector<match::Template> gallery;
      std::vector<fs::path> files;
      std::vector<int> gallery_labels;
      std::set<std::string> seen;
      for (auto r : idx) {
        const auto& rec = manifest.records[r];
        if (!seen.insert(rec.clean).second) continue;
        gallery.push_back(match::make_template(io::read_stack(manifest.resolve(rec.stack))));
        files.push_back(manifest.resolve(rec.clean));
        gallery_labels.push_back(rec.finger_id);
      }
      for (const auto& side : sides) pr.rows.push_back(score(side, all_rows, gallery, files, gallery_labels, protocol));
    } else {
      // Seeded split of the split's latents into gallery and probes, shared by every row.
      std::vector<std::size_t> perm = all_rows;
      Rng rng(derive_seed(cfg.seed, {0x6c326cULL}));
      for (std::size_t i = perm.size(); i > 1; --i) {
        std::swap(perm[i - 1], perm[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
      }
      const auto n_gallery = static_cast<std::size_t>(
          std::clamp<long>(std::lround(cfg.latent_gallery_fraction * static_cast<double>(perm.size())), 1L,
                           static_cast<long>(perm.size()) - 1));
      std::vector<std::size_t> gallery_rows(perm.begin(), perm.begin() + static_cast<long>(n_gallery));
      std::vector<std::size_t> probe_rows(perm.begin() + static_cast<long>(n_gallery), perm.end());
      std::sort(gallery_rows.begin(), gallery_rows.end());
      std::sort(probe_rows.begin(), probe_rows.end());
      for (const auto& side : sides) {
        std::vector<match::Template> gallery;
        std::vector<fs::path> files;
        std::vector<int> gallery_labels;
        for (auto i : gallery_rows) {
          gallery.push_back(side.templates[i]);
          files.push_back(side.files[i]);
          gallery_labels.push_back(labels[i]);
        }
        pr.rows.push_back(score(side, probe_rows, gallery, files, gallery_labels, protocol));
      }
    }
    report.matching.push_back(std::move(pr));
  }

  if (std::find(cfg.protocols.begin(), cfg.protocols.end(), Protocol::kQuality) != cfg.protocols.end()) {
    for (const auto& side : sides) {
      std::vector<int> scores(side.images.size(), 0);
      parallel_for(scores.size(), cfg.threads, [&](std::size_t i) {
        scores[i] = cfg.external_quality ? proc::quality_external(side.files[i], *cfg.external_quality)
                                         : quality_score(side.images[i], extract);
      });
      QualityRow q;
      q.name = side.name;
      q.histogram.assign(5, 0);
      for (int s : scores) ++q.histogram[static_cast<std::size_t>(s - 1)];
      q.mean = scores.empty() ? 0.0 : std::accumulate(scores.begin(), scores.end(), 0.0) / scores.size();
      report.quality.push_back(std::move(q));
    }
  }

  std::ofstream json_out(out_dir / "report.json", std::ios::trunc);
  json_out << report.to_json().dump(2) << '\n';
  std::ofstream csv(out_dir / "rank_table.csv", std::ios::trunc);
  csv << "protocol,row";
  for (int k : cfg.report_ranks) csv << ",rank_" << k;
  csv << '\n';
  for (const auto& p : report.matching) {
    for (const auto& r : p.rows) {
      csv << to_string(p.protocol) << ',' << csv_field(r.name);
      for (int k : cfg.report_ranks) csv << ',' << r.cmc.at_rank(k);
      csv << '\n';
    }
  }
  if (!json_out || !csv || !failures_csv) throw IoError("cannot write the report into " + out_dir.string());

  if (cfg.plots) {
    for (const auto& p : report.matching) {
      std::vector<plots::Series> series;
      for (const auto& r : p.rows) series.push_back({r.name, r.cmc.rank_accuracies});
      plots::write_cmc_svg(out_dir / ("cmc_" + to_string(p.protocol) + ".svg"), "CMC " + to_string(p.protocol), series);
    }
    if (!report.quality.empty()) {
      std::vector<plots::Series> series;
      for (const auto& q : report.quality) series.push_back({q.name, std::vector<double>(q.histogram.begin(), q.histogram.end())});
      plots::write_histogram_svg(out_dir / "quality_histogram.svg", "Quality score (1 = best)", {"1", "2", "3", "4", "5"},
                                 series);
    }
  }
  return report;
}

}  // namespace lfr::eval
