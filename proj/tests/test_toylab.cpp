#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "relprune/metrics.hpp"
#include "relprune/toylab.hpp"

using namespace relprune;

namespace {

std::multiset<std::vector<double>> image_bag(const Dataset& set) {
  std::multiset<std::vector<double>> bag;
  for (const LabeledImage& li : set) bag.insert(li.image.data);
  return bag;
}

bool disjoint(const Dataset& a, const Dataset& b) {
  const auto bag = image_bag(b);
  for (const LabeledImage& li : a)
    if (bag.count(li.image.data)) return false;
  return true;
}

}  // namespace

TEST_CASE("generation is deterministic per seed") {
  SyntheticSpec spec;
  const SplitDataset a = generate(spec);
  const SplitDataset b = generate(spec);
  REQUIRE(a.train.size() == b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    CHECK(a.train[i].image.data == b.train[i].image.data);
    CHECK(a.train[i].label == b.train[i].label);
  }
  spec.seed = 1;
  const SplitDataset c = generate(spec);
  bool identical = true;
  for (std::size_t i = 0; i < a.train.size() && identical; ++i)
    identical = a.train[i].image.data == c.train[i].image.data;
  CHECK_FALSE(identical);
}

TEST_CASE("zero noise reproduces the class templates exactly") {
  SyntheticSpec spec;
  spec.noise_std = 0.0;
  const SplitDataset d = generate(spec);
  for (const LabeledImage& li : d.ref)
    CHECK(li.image.data == class_template(spec, li.label).data);
}

TEST_CASE("split sizes and disjointness") {
  SyntheticSpec spec;  // 120 per class: 30 ref + 30 eval + 60 train
  const SplitDataset d = generate(spec);
  CHECK(d.ref.size() == spec.ref_per_class * spec.num_classes);
  CHECK(d.eval.size() == spec.eval_per_class * spec.num_classes);
  CHECK(d.train.size() ==
        (spec.samples_per_class - spec.ref_per_class - spec.eval_per_class) * spec.num_classes);
  CHECK(disjoint(d.ref, d.train));
  CHECK(disjoint(d.ref, d.eval));
  CHECK(disjoint(d.eval, d.train));
}

TEST_CASE("invalid specs are rejected") {
  SyntheticSpec spec;
  spec.num_classes = 1;
  CHECK_THROWS_AS(generate(spec), std::invalid_argument);
  spec.num_classes = 6;
  CHECK_THROWS_AS(generate(spec), std::invalid_argument);
  spec = SyntheticSpec{};
  spec.samples_per_class = 50;  // smaller than ref + eval
  CHECK_THROWS_AS(generate(spec), std::invalid_argument);
  spec = SyntheticSpec{};
  spec.noise_std = -0.1;
  CHECK_THROWS_AS(generate(spec), std::invalid_argument);
}

TEST_CASE("subset_per_class takes the first n of each class") {
  SyntheticSpec spec;
  const SplitDataset d = generate(spec);
  const Dataset sub = subset_per_class(d.ref, 10, spec.num_classes);
  CHECK(sub.size() == 10 * spec.num_classes);
  std::size_t seen0 = 0;
  for (const LabeledImage& li : sub)
    if (li.label == 0) {
      CHECK(li.image.data == d.ref[seen0].image.data);
      ++seen0;
    }
  CHECK(seen0 == 10);
}

TEST_CASE("lr = 0 leaves parameters unchanged") {
  SyntheticSpec spec;
  const SplitDataset d = generate(spec);
  ModelGraph model = default_toy_model(spec.channels, spec.num_classes);
  init_params(model, 0);
  TrainConfig tc;
  tc.epochs = 2;
  tc.lr = 0.0;
  const TrainResult res = train(model, d.train, tc);
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    CHECK(res.model.layers[li].weight.data == model.layers[li].weight.data);
    CHECK(res.model.layers[li].bias.data == model.layers[li].bias.data);
  }
}

TEST_CASE("training is deterministic per seed") {
  SyntheticSpec spec;
  const SplitDataset d = generate(spec);
  TrainConfig tc;
  tc.epochs = 3;
  const TrainResult a = train_default_toy(spec, tc, d);
  const TrainResult b = train_default_toy(spec, tc, d);
  for (std::size_t li = 0; li < a.model.layers.size(); ++li) {
    CHECK(a.model.layers[li].weight.data == b.model.layers[li].weight.data);
    CHECK(a.model.layers[li].bias.data == b.model.layers[li].bias.data);
  }
}

TEST_CASE("default configuration trains a usable model") {
  for (std::uint64_t seed : {0ull, 1ull}) {
    SyntheticSpec spec;
    spec.seed = seed;
    const SplitDataset d = generate(spec);
    const TrainResult res = train_default_toy(spec, TrainConfig{}, d);
    INFO("seed " << seed << " train accuracy " << res.final_train_accuracy);
    CHECK(res.final_train_accuracy >= 0.95);
    const ClassAccuracy eval_acc = per_class_accuracy(res.model, d.eval);
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
      INFO("seed " << seed << " class " << c << " eval accuracy " << eval_acc.accuracy(c));
      CHECK(eval_acc.accuracy(c) >= 0.9);
    }
  }
}

TEST_CASE("divergence raises a numeric error") {
  SyntheticSpec spec;
  const SplitDataset d = generate(spec);
  ModelGraph model = default_toy_model(spec.channels, spec.num_classes);
  init_params(model, 0);
  TrainConfig tc;
  tc.epochs = 3;
  tc.lr = 1e9;
  CHECK_THROWS_AS(train(model, d.train, tc), NumericError);
}
