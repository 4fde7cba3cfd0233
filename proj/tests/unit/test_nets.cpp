#include <gtest/gtest.h>

#include <vector>

#include "lfr/errors.hpp"
#include "lfr/nets.hpp"

namespace lfr::nets {
namespace {

using Dims = std::vector<std::int64_t>;

struct Row {
  int layer;
  Dims input;
  Dims output;
  Dims final_output;
};

// Input/Output Size columns of the architecture tables at 256x256.
const std::vector<Row> kGeneratorTable = {
    {1, {256, 256, 1}, {256, 256, 64}, {}},      {2, {256, 256, 64}, {128, 128, 128}, {}},
    {3, {128, 128, 128}, {128, 128, 128}, {}},   {4, {128, 128, 128}, {64, 64, 256}, {}},
    {5, {64, 64, 256}, {64, 64, 256}, {}},       {6, {64, 64, 256}, {32, 32, 512}, {}},
    {7, {32, 32, 512}, {32, 32, 512}, {}},       {8, {32, 32, 512}, {16, 16, 512}, {}},
    {9, {16, 16, 512}, {16, 16, 512}, {}},       {10, {16, 16, 512}, {16, 16, 512}, {}},
    {11, {16, 16, 512}, {32, 32, 512}, {}},      {12, {32, 32, 1024}, {32, 32, 512}, {}},
    {13, {32, 32, 512}, {64, 64, 256}, {}},      {14, {64, 64, 512}, {64, 64, 256}, {}},
    {15, {64, 64, 256}, {128, 128, 128}, {}},    {16, {128, 128, 256}, {128, 128, 128}, {}},
    {17, {128, 128, 128}, {256, 256, 64}, {}},   {18, {256, 256, 128}, {256, 256, 4}, {}},
};

const std::vector<Row> kPidiTable = {
    {1, {256, 256, 4}, {128, 128, 64}, {}}, {2, {128, 128, 64}, {64, 64, 128}, {}},
    {3, {64, 64, 128}, {32, 32, 256}, {}},  {4, {32, 32, 256}, {16, 16, 512}, {}},
    {5, {16, 16, 512}, {8, 8, 512}, {}},    {6, {8, 8, 512}, {4, 4, 512}, {}},
    {7, {4, 4, 512}, {2048, 1}, {}},
};

const std::vector<Row> kDiscriminatorTable = {
    {1, {256, 256, 5}, {128, 128, 64}, {128, 128, 128}},
    {2, {128, 128, 128}, {64, 64, 128}, {64, 64, 256}},
    {3, {64, 64, 256}, {32, 32, 256}, {32, 32, 512}},
    {4, {32, 32, 512}, {16, 16, 512}, {16, 16, 1024}},
    {5, {16, 16, 1024}, {16, 16, 1}, {16, 16, 1}},
};

void expect_table(const Trace& trace, const std::vector<Row>& table) {
  ASSERT_EQ(trace.size(), table.size());
  for (std::size_t i = 0; i < table.size(); ++i) {
    SCOPED_TRACE("layer " + std::to_string(table[i].layer));
    EXPECT_EQ(trace[i].layer, table[i].layer);
    EXPECT_EQ(trace[i].input, table[i].input);
    EXPECT_EQ(trace[i].output, table[i].output);
    if (!table[i].final_output.empty()) EXPECT_EQ(trace[i].final_output, table[i].final_output);
  }
}

std::int64_t params_with_prefix(const torch::nn::Module& m, const std::string& prefix) {
  std::int64_t n = 0;
  for (const auto& p : m.named_parameters())
    if (p.key().rfind(prefix, 0) == 0) n += p.value().numel();
  return n;
}

// conv k*k*in*out + out bias, plus BN gamma/beta.
std::int64_t conv_bn(std::int64_t in, std::int64_t out, bool bn = true) {
  return 16 * in * out + out + (bn ? 2 * out : 0);
}

class NetsTest : public ::testing::Test {
 protected:
  void SetUp() override { torch::manual_seed(7); }
};

TEST_F(NetsTest, GeneratorMatchesTable) {
  Generator g;
  g->eval();
  torch::NoGradGuard guard;
  Trace trace;
  const auto out = g->forward(torch::rand({1, 1, 256, 256}), &trace);
  expect_table(trace, kGeneratorTable);
  EXPECT_EQ(out.sizes(), (std::vector<std::int64_t>{1, 4, 256, 256}));
  EXPECT_GT(out.min().item<float>(), 0.0f);
  EXPECT_LT(out.max().item<float>(), 1.0f);
}

TEST_F(NetsTest, PidiMatchesTable) {
  PidiExtractor p;
  p->eval();
  torch::NoGradGuard guard;
  Trace trace;
  const auto f = p->forward(torch::rand({1, 4, 256, 256}), &trace);
  expect_table(trace, kPidiTable);
  EXPECT_EQ(f.embedding.sizes(), (std::vector<std::int64_t>{1, 2048}));
  const Dims maps[4] = {{1, 64, 128, 128}, {1, 128, 64, 64}, {1, 256, 32, 32}, {1, 512, 16, 16}};
  for (int i = 0; i < 4; ++i) EXPECT_EQ(f.maps[static_cast<std::size_t>(i)].sizes().vec(), maps[i]);
}

TEST_F(NetsTest, DiscriminatorMatchesTable) {
  PidiExtractor p;
  Discriminator d;
  p->eval();
  d->eval();
  torch::NoGradGuard guard;
  const auto stack = torch::rand({1, 4, 256, 256});
  const auto f = p->forward(stack);
  Trace trace;
  const auto out = d->forward(torch::rand({1, 1, 256, 256}), stack, &f, &trace);
  expect_table(trace, kDiscriminatorTable);
  EXPECT_EQ(out.sizes(), (std::vector<std::int64_t>{1, 1, 16, 16}));
}

TEST_F(NetsTest, AblatedDiscriminatorChannels) {
  Discriminator d(false);
  d->eval();
  torch::NoGradGuard guard;
  Trace trace;
  const auto out = d->forward(torch::rand({2, 1, 64, 64}), torch::rand({2, 4, 64, 64}), nullptr, &trace);
  const std::int64_t expected_in[5] = {5, 64, 128, 256, 512};
  for (int i = 0; i < 5; ++i) EXPECT_EQ(trace[static_cast<std::size_t>(i)].input[2], expected_in[i]);
  EXPECT_EQ(out.sizes(), (std::vector<std::int64_t>{2, 1, 4, 4}));
}

TEST_F(NetsTest, LayerParamCounts) {
  Generator g;
  Discriminator d;
  EXPECT_EQ(params_with_prefix(*g, "l1.conv."), 4 * 4 * 1 * 64 + 64);
  EXPECT_EQ(params_with_prefix(*g, "l1.conv."), 1088);
  EXPECT_EQ(params_with_prefix(*d, "l5."), 4 * 4 * 1024 * 1 + 1);
  EXPECT_EQ(params_with_prefix(*d, "l5."), 16385);
}

TEST_F(NetsTest, TotalParamCountsFromTables) {
  // Generator: encoder, transposed layers, fuse layers, head without BN.
  const std::int64_t gen = conv_bn(1, 64) + conv_bn(64, 128) + conv_bn(128, 128) + conv_bn(128, 256) +
                           conv_bn(256, 256) + conv_bn(256, 512) + 4 * conv_bn(512, 512) +
                           conv_bn(512, 512) + conv_bn(1024, 512) + conv_bn(512, 256) + conv_bn(512, 256) +
                           conv_bn(256, 128) + conv_bn(256, 128) + conv_bn(128, 64) + conv_bn(128, 4, false);
  const std::int64_t pidi = conv_bn(4, 64) + conv_bn(64, 128) + conv_bn(128, 256) + conv_bn(256, 512) +
                            2 * conv_bn(512, 512) + conv_bn(512, 512, false);
  const std::int64_t disc = conv_bn(5, 64) + conv_bn(128, 128) + conv_bn(256, 256) + conv_bn(512, 512) +
                            conv_bn(1024, 1, false);
  EXPECT_EQ(count_params(*Generator()), gen);
  EXPECT_EQ(count_params(*PidiExtractor()), pidi);
  EXPECT_EQ(count_params(*Discriminator()), disc);
}

TEST_F(NetsTest, DiscriminatorOutputInUnitInterval) {
  PidiExtractor p;
  Discriminator d;
  torch::NoGradGuard guard;
  const auto stack = torch::rand({3, 4, 64, 64});
  const auto f = p->forward(stack);
  const auto out = d->forward(torch::rand({3, 1, 64, 64}), stack, &f);
  EXPECT_GT(out.min().item<float>(), 0.0f);
  EXPECT_LT(out.max().item<float>(), 1.0f);
}

TEST_F(NetsTest, PidiIsNotConstant) {
  PidiExtractor p;
  p->eval();
  torch::NoGradGuard guard;
  const auto a = p->forward(torch::rand({1, 4, 64, 64}));
  const auto b = p->forward(torch::rand({1, 4, 64, 64}));
  EXPECT_GT((a.embedding - b.embedding).abs().max().item<float>(), 0.0f);
  for (int i = 0; i < 4; ++i)
    EXPECT_GT((a.maps[static_cast<std::size_t>(i)] - b.maps[static_cast<std::size_t>(i)]).abs().max().item<float>(),
              0.0f);
}

TEST_F(NetsTest, DiscriminatorDependsOnPidi) {
  PidiExtractor p;
  Discriminator d;
  p->eval();
  d->eval();
  const auto latent = torch::rand({1, 1, 64, 64});
  const auto stack = torch::rand({1, 4, 64, 64});
  auto f = p->forward(stack);
  for (auto& m : f.maps) m = m.detach().requires_grad_(true);
  const auto out = d->forward(latent, stack, &f).sum();
  out.backward();
  double grad_norm = 0.0;
  for (auto& m : f.maps) grad_norm += m.grad().abs().sum().item<double>();
  EXPECT_GT(grad_norm, 0.0);

  torch::NoGradGuard guard;
  PidiFeatures zero = f;
  for (auto& m : zero.maps) m = torch::zeros_like(m);
  EXPECT_GT((d->forward(latent, stack, &f) - d->forward(latent, stack, &zero)).abs().max().item<float>(), 0.0f);
}

TEST_F(NetsTest, StructuralErrors) {
  Generator g;
  PidiExtractor p;
  Discriminator d;
  torch::NoGradGuard guard;
  EXPECT_THROW(g->forward(torch::rand({1, 2, 64, 64})), ShapeError);
  EXPECT_THROW(g->forward(torch::rand({1, 1, 60, 64})), ShapeError);
  EXPECT_THROW(g->forward(torch::rand({1, 1, 64, 64}) + 1.5), ValidationError);
  EXPECT_THROW(p->forward(torch::rand({1, 3, 64, 64})), ShapeError);
  const auto stack = torch::rand({1, 4, 64, 64});
  EXPECT_THROW(d->forward(torch::rand({1, 1, 64, 64}), stack, nullptr), ShapeError);
  const auto other = p->forward(torch::rand({1, 4, 128, 128}));
  EXPECT_THROW(d->forward(torch::rand({1, 1, 64, 64}), stack, &other), ShapeError);
  EXPECT_THROW(d->forward(torch::rand({1, 1, 32, 32}), stack, nullptr), ShapeError);
}

TEST_F(NetsTest, ArchitectureHash) {
  EXPECT_EQ(architecture_hash("discriminator", *Discriminator()), architecture_hash("discriminator", *Discriminator()));
  EXPECT_NE(architecture_hash("discriminator", *Discriminator(true)),
            architecture_hash("discriminator", *Discriminator(false)));
  EXPECT_NE(architecture_hash("generator", *Generator()), architecture_hash("pidi", *PidiExtractor()));
}

TEST_F(NetsTest, InitWeightsStatistics) {
  Generator g;
  init_weights(*g);
  const auto w = g->named_parameters()["l8.conv.conv.weight"];
  EXPECT_NEAR(w.mean().item<double>(), 0.0, 0.002);
  EXPECT_NEAR(w.std().item<double>(), 0.02, 0.002);
  EXPECT_EQ(g->named_parameters()["l8.conv.conv.bias"].abs().max().item<double>(), 0.0);
}

// Directional central differences in double precision, train-mode BN.
template <typename Fn>
void check_gradients(torch::nn::Module& module, std::vector<torch::Tensor> inputs, Fn&& fn) {
  module.to(torch::kDouble);
  module.train();
  for (auto& x : inputs) x = x.to(torch::kDouble).requires_grad_(true);
  auto params = module.parameters();

  const torch::Tensor loss = fn(inputs);
  std::vector<torch::Tensor> wrt = inputs;
  wrt.insert(wrt.end(), params.begin(), params.end());
  const auto grads = torch::autograd::grad({loss}, wrt);

  for (int probe = 0; probe < 4; ++probe) {
    std::vector<torch::Tensor> dirs;
    double norm_sq = 0.0;
    for (const auto& w : wrt) {
      dirs.push_back(torch::randn_like(w));
      norm_sq += dirs.back().pow(2).sum().item<double>();
    }
    double analytic = 0.0;
    for (std::size_t i = 0; i < wrt.size(); ++i) {
      dirs[i] /= std::sqrt(norm_sq);
      analytic += (grads[i] * dirs[i]).sum().item<double>();
    }
    const double h = 1e-6;
    auto shifted = [&](double s) {
      torch::NoGradGuard guard;
      std::vector<torch::Tensor> moved;
      for (std::size_t i = 0; i < inputs.size(); ++i) moved.push_back(inputs[i] + s * dirs[i]);
      for (std::size_t j = 0; j < params.size(); ++j) params[j].add_(s * dirs[inputs.size() + j]);
      const double v = fn(moved).template item<double>();
      for (std::size_t j = 0; j < params.size(); ++j) params[j].sub_(s * dirs[inputs.size() + j]);
      return v;
    };
    const double numeric = (shifted(h) - shifted(-h)) / (2 * h);
    EXPECT_LE(std::abs(numeric - analytic), 1e-3 * std::max(std::abs(numeric), std::abs(analytic)) + 1e-9)
        << "probe " << probe << " numeric " << numeric << " analytic " << analytic;
  }
}

TEST_F(NetsTest, GeneratorGradientsMatchFiniteDifferences) {
  Generator g;
  const auto weights = torch::randn({2, 4, 16, 16}, torch::kDouble);
  check_gradients(*g, {torch::rand({2, 1, 16, 16})}, [&](const std::vector<torch::Tensor>& in) {
    return (g->forward(in[0].clamp(0.0, 1.0)) * weights).sum();
  });
}

TEST_F(NetsTest, PidiGradientsMatchFiniteDifferences) {
  PidiExtractor p;
  // 128 px with batch 2 keeps at least 8 values per channel in the deepest batch norm.
  const auto weights = torch::randn({2, 512}, torch::kDouble);
  check_gradients(*p, {torch::rand({2, 4, 128, 128})}, [&](const std::vector<torch::Tensor>& in) {
    const auto f = p->forward(in[0]);
    return (f.embedding * weights).sum() + f.maps[2].mean();
  });
}

TEST_F(NetsTest, DiscriminatorGradientsMatchFiniteDifferences) {
  Discriminator d;
  const auto weights = torch::randn({2, 1, 2, 2}, torch::kDouble);
  const Dims shapes[4] = {{2, 64, 16, 16}, {2, 128, 8, 8}, {2, 256, 4, 4}, {2, 512, 2, 2}};
  std::vector<torch::Tensor> inputs = {torch::rand({2, 1, 32, 32}), torch::rand({2, 4, 32, 32})};
  for (const auto& s : shapes) inputs.push_back(torch::rand(s));
  check_gradients(*d, inputs, [&](const std::vector<torch::Tensor>& in) {
    PidiFeatures f;
    for (int i = 0; i < 4; ++i) f.maps[static_cast<std::size_t>(i)] = in[static_cast<std::size_t>(i + 2)];
    return (d->forward(in[0], in[1], &f) * weights).sum();
  });
}

}  // namespace
}  // namespace lfr::nets
