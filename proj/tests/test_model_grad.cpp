#include <doctest.h>

#include "gradcheck.hpp"
#include "transfg/encoder.hpp"
#include "transfg/losses.hpp"
#include "transfg/model.hpp"
#include "transfg/psm.hpp"

using namespace transfg;
using transfg::testing::gradcheck;
using transfg::testing::random_tensor;
using transfg::testing::weighted_sum;

namespace {

constexpr int kSeeds = 100;

std::vector<Tensor<double>> handles(const std::vector<std::pair<std::string, Tensor<double>>>& named) {
  std::vector<Tensor<double>> out;
  for (const auto& [name, t] : named) out.push_back(t);
  return out;
}

// Perturbs freshly initialised parameters so biases, gains and embeddings
// are not at their special initial values.
void jitter(const std::vector<std::pair<std::string, Tensor<double>>>& named, Rng& rng,
            double scale) {
  for (auto [name, t] : named) {
    for (auto& v : t.data()) v += rng.uniform(-scale, scale);
  }
}

ModelConfig tiny_model(bool psm) {
  ModelConfig cfg;
  cfg.patch = {5, 5, 1, 2, 1};
  cfg.encoder = {2, 2, 8, 4};
  cfg.num_classes = 3;
  cfg.part_selection = psm;
  return cfg;
}

}  // namespace

TEST_CASE("gradcheck encoder layer (3 tokens, 2 heads)") {
  EncoderConfig cfg{2, 2, 8, 2};
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(seed);
    auto params = LayerParams<double>::init(cfg, rng);
    jitter(params.named(""), rng, 0.2);
    const std::size_t batch = 1 + rng.below(2);
    TokenSequence<double> z{random_tensor({batch * 3, 8}, rng), batch, 3};
    auto w = random_tensor({batch * 3, 8}, rng, -1, 1, false);
    auto ps = handles(params.named(""));
    ps.push_back(z.tokens);
    CHECK(gradcheck([&](Tape<double>& t) { return weighted_sum(t, encoder_layer(t, z, params, 2).tokens.tokens, w); },
                    ps) < 1e-5);
  }
}

TEST_CASE("gradcheck embed") {
  PatchConfig patch{5, 5, 1, 2, 1};
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(seed);
    auto p = PatchEmbedParams<double>::init(patch, 4, rng);
    jitter({{"cls", p.cls}, {"pos", p.position}}, rng, 0.5);
    const std::size_t batch = 1 + rng.below(2);
    auto images = random_tensor({batch, 5, 5, 1}, rng, 0, 1, false);
    auto patches = extract_patches_batch(images, patch);
    auto w = random_tensor({batch * 17, 4}, rng, -1, 1, false);
    CHECK(gradcheck([&](Tape<double>& t) { return weighted_sum(t, embed(t, patches, p, batch).tokens, w); },
                    {p.projection, p.position, p.cls}) < 1e-5);
  }
}

TEST_CASE("gradcheck assemble_local and classify") {
  EncoderConfig enc{2, 2, 8, 2};
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(seed);
    const std::size_t batch = 2, length = 6;
    TokenSequence<double> hidden{random_tensor({batch * length, 8}, rng), batch, length};
    std::vector<std::vector<std::size_t>> idx(batch, std::vector<std::size_t>(2));
    for (auto& row : idx) {
      for (auto& i : row) i = 1 + rng.below(length - 1);
    }
    auto layer = LayerParams<double>::init(enc, rng);
    auto head = HeadParams<double>::init(8, 3, rng);
    jitter(layer.named(""), rng, 0.2);
    auto w = random_tensor({batch * 3, 8}, rng, -1, 1, false);
    CHECK(gradcheck([&](Tape<double>& t) { return weighted_sum(t, assemble_local(t, hidden, idx).tokens, w); },
                    {hidden.tokens}) < 1e-5);
    auto wl = random_tensor({batch, 3}, rng, -1, 1, false);
    auto ps = handles(layer.named(""));
    ps.push_back(head.weight);
    ps.push_back(head.bias);
    ps.push_back(hidden.tokens);
    CHECK(gradcheck([&](Tape<double>& t) { return weighted_sum(t, classify(t, hidden, layer, head, 2).logits, wl); },
                    ps) < 1e-5);
  }
}

TEST_CASE("gradcheck contrastive and total loss") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(seed);
    const std::size_t b = 2 + rng.below(4), d = 2 + rng.below(4), c = 3;
    auto z = random_tensor({b, d}, rng);
    auto logits = random_tensor({b, c}, rng, -2, 2);
    std::vector<std::size_t> labels(b);
    for (auto& l : labels) l = rng.below(c);
    const double alpha = rng.uniform(0.0, 0.9);
    CHECK(gradcheck([&](Tape<double>& t) { return contrastive_loss(t, z, labels, alpha); }, {z}) < 1e-5);
    CHECK(gradcheck([&](Tape<double>& t) { return total_loss(t, logits, labels, z, alpha).total; },
                    {z, logits}) < 1e-5);
  }
}

TEST_CASE("gradcheck end-to-end tiny model") {
  for (bool psm : {true, false}) {
    const auto cfg = tiny_model(psm);
    for (int seed = 0; seed < kSeeds; ++seed) {
      auto params = ModelParams<double>::init(cfg, seed);
      Rng rng(1000 + seed);
      jitter(params.named(), rng, 0.1);
      auto images = random_tensor({3, 5, 5, 1}, rng, 0, 1, false);
      std::vector<std::size_t> labels{0, 1, 0};
      auto loss_fn = [&](Tape<double>& t) {
        auto fwd = forward(t, params, cfg, images);
        return total_loss(t, fwd.logits, labels, fwd.cls_tokens, kDefaultMargin).total;
      };
      CHECK(gradcheck(loss_fn, handles(params.named())) < 1e-4);
    }
  }
}
