#include "lfr/checkpoint.hpp"

#include <fstream>

#include "lfr/checksum.hpp"
#include "lfr/errors.hpp"
#include "lfr/nets.hpp"

namespace lfr::checkpoint {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path with_ext(const fs::path& stem, const char* ext) {
  fs::path p = stem;
  p += ext;
  return p;
}

json describe(const torch::nn::Module& module) {
  json tensors = json::array();
  for (const auto& p : module.named_parameters()) {
    tensors.push_back({{"name", p.key()}, {"kind", "parameter"}, {"shape", p.value().sizes().vec()}});
  }
  for (const auto& b : module.named_buffers()) {
    tensors.push_back({{"name", b.key()}, {"kind", "buffer"}, {"shape", b.value().sizes().vec()}});
  }
  return tensors;
}

}  // namespace

void save(const fs::path& stem, const torch::nn::Module& module, Meta meta) {
  meta.arch_hash = nets::architecture_hash(meta.kind, module);
  if (!stem.parent_path().empty()) fs::create_directories(stem.parent_path());
  try {
    torch::serialize::OutputArchive archive;
    module.save(archive);
    archive.save_to(with_ext(stem, ".pt").string());
  } catch (const c10::Error& e) {
    throw IoError("cannot write checkpoint " + with_ext(stem, ".pt").string() + ": " + e.what_without_backtrace());
  }
  const json sidecar = {{"kind", meta.kind},
                        {"arch_hash", meta.arch_hash},
                        {"input_size", meta.input_size},
                        {"epoch", meta.epoch},
                        {"global_step", meta.global_step},
                        {"seed", meta.seed},
                        {"param_count", nets::count_params(module)},
                        {"param_digest", parameter_digest(module)},
                        {"extra", meta.extra},
                        {"tensors", describe(module)}};
  std::ofstream out(with_ext(stem, ".json"));
  out << sidecar.dump(2) << '\n';
  if (!out) throw IoError("cannot write checkpoint sidecar " + with_ext(stem, ".json").string());
}

Meta read_meta(const fs::path& stem) {
  std::ifstream in(with_ext(stem, ".json"));
  if (!in) throw CheckpointError("missing checkpoint sidecar " + with_ext(stem, ".json").string());
  try {
    const json j = json::parse(in);
    Meta m;
    m.kind = j.at("kind").get<std::string>();
    m.arch_hash = j.at("arch_hash").get<std::string>();
    m.input_size = j.at("input_size").get<int>();
    m.epoch = j.at("epoch").get<int>();
    m.global_step = j.at("global_step").get<std::int64_t>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.extra = j.value("extra", json::object());
    return m;
  } catch (const json::exception& e) {
    throw CheckpointError("corrupt checkpoint sidecar " + with_ext(stem, ".json").string() + ": " + e.what());
  }
}

Meta load(const fs::path& stem, torch::nn::Module& module, const std::string& kind) {
  Meta meta = read_meta(stem);
  if (meta.kind != kind) {
    throw CheckpointError("checkpoint " + stem.string() + " holds a " + meta.kind + ", expected " + kind);
  }
  const std::string expected = nets::architecture_hash(kind, module);
  if (meta.arch_hash != expected) {
    throw CheckpointError("architecture hash mismatch for " + stem.string() + ": file " + meta.arch_hash +
                          ", model " + expected);
  }
  try {
    torch::serialize::InputArchive archive;
    archive.load_from(with_ext(stem, ".pt").string());
    module.load(archive);
  } catch (const c10::Error& e) {
    throw CheckpointError("unreadable checkpoint " + with_ext(stem, ".pt").string() + ": " +
                          e.what_without_backtrace());
  }
  return meta;
}

void save_optimizer(const fs::path& file, const torch::optim::Optimizer& optimizer) {
  try {
    torch::serialize::OutputArchive archive;
    optimizer.save(archive);
    archive.save_to(file.string());
  } catch (const c10::Error& e) {
    throw IoError("cannot write optimizer state " + file.string() + ": " + e.what_without_backtrace());
  }
}

void load_optimizer(const fs::path& file, torch::optim::Optimizer& optimizer) {
  try {
    torch::serialize::InputArchive archive;
    archive.load_from(file.string());
    optimizer.load(archive);
  } catch (const c10::Error& e) {
    throw CheckpointError("unreadable optimizer state " + file.string() + ": " + e.what_without_backtrace());
  }
}

std::string parameter_digest(const torch::nn::Module& module) {
  std::string bytes;
  auto append = [&](const torch::Tensor& t) {
    const auto c = t.detach().to(torch::kCPU).contiguous();
    bytes.append(static_cast<const char*>(c.data_ptr()), c.numel() * c.element_size());
  };
  for (const auto& p : module.parameters()) append(p);
  for (const auto& b : module.buffers()) append(b);
  return sha256_hex(bytes);
}

}  // namespace lfr::checkpoint
