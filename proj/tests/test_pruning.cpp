#include <catch2/catch_amalgamated.hpp>

#include <algorithm>

#include "relprune/pruning.hpp"
#include "relprune/rate.hpp"
#include "test_support.hpp"

using namespace relprune;
using testsupport::fill_uniform;
using testsupport::max_abs_diff;
using testsupport::random_input;
using testsupport::random_toy_net;

namespace {

// Net with a single conv layer of `filters` output channels (plus head),
// used when the test wants full control over the candidate pool.
ModelGraph one_layer_net(std::size_t filters, std::size_t classes = 2) {
  LayerSpec conv = LayerSpec::conv2d(1, filters, 3, 3, 1, 1, 1, 1);
  for (std::size_t i = 0; i < conv.weight.size(); ++i)
    conv.weight.data[i] = 0.1 + 0.01 * static_cast<double>(i % 7);
  LayerSpec head = LayerSpec::dense(filters, classes);
  for (std::size_t i = 0; i < head.weight.size(); ++i)
    head.weight.data[i] = 0.05 * static_cast<double>(i % 5) - 0.1;
  return make_model({1, 6, 6},
                    {conv, LayerSpec::relu(), LayerSpec::global_avg_pool(), head});
}

ModelGraph two_layer_net(std::size_t f1, std::size_t f2, std::size_t classes = 2) {
  testsupport::Rng rng(9001);
  LayerSpec conv1 = LayerSpec::conv2d(1, f1, 3, 3, 1, 1, 1, 1);
  fill_uniform(conv1.weight, rng, -0.5, 0.5);
  LayerSpec conv2 = LayerSpec::conv2d(f1, f2, 3, 3, 1, 1, 1, 1);
  fill_uniform(conv2.weight, rng, -0.5, 0.5);
  LayerSpec head = LayerSpec::dense(f2, classes);
  fill_uniform(head.weight, rng, -0.5, 0.5);
  return make_model({1, 6, 6}, {conv1, LayerSpec::relu(), conv2, LayerSpec::relu(),
                                LayerSpec::global_avg_pool(), head});
}

// Independent ranking oracle: sort alive ids by (score, id) and walk,
// skipping any id whose layer would be emptied.
std::vector<std::size_t> oracle_selection(const ModelGraph& m, const std::vector<double>& scores,
                                          std::size_t count) {
  std::vector<std::size_t> ids;
  for (std::size_t g = 0; g < m.f_num(); ++g)
    if (m.is_alive(g)) ids.push_back(g);
  std::sort(ids.begin(), ids.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] < scores[b];
    return a < b;
  });
  std::vector<std::size_t> alive_per_layer(m.layers.size(), 0);
  for (std::size_t g = 0; g < m.f_num(); ++g)
    if (m.is_alive(g)) alive_per_layer[m.filter_ref(g).layer_id]++;
  std::vector<std::size_t> picked;
  for (std::size_t g : ids) {
    if (picked.size() == count) break;
    const std::size_t layer = m.filter_ref(g).layer_id;
    if (alive_per_layer[layer] == 1) continue;
    alive_per_layer[layer]--;
    picked.push_back(g);
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

}  // namespace

TEST_CASE("fraction arithmetic is exact") {
  CHECK(Fraction::from_double(0.05) == Fraction(1, 20));
  CHECK(Fraction::from_double(0.95) == Fraction(19, 20));
  CHECK(Fraction(1, 20).halved() == Fraction(1, 40));
  Fraction p = Fraction::zero();
  for (int i = 0; i < 19; ++i) p = p + Fraction(1, 20);
  CHECK(p == Fraction(19, 20));
  CHECK(p.to_string() == "0.95");
  CHECK(Fraction(1, 20).to_string() == "0.05");
  CHECK(Fraction(11, 80).to_string() == "0.1375");
  CHECK(Fraction(3, 20) < Fraction(1, 5));
  CHECK_THROWS_AS(Fraction(1, 0), std::invalid_argument);
}

TEST_CASE("count_to_prune truncates toward zero") {
  CHECK(count_to_prune(Fraction(1, 20), 64) == 3);   // floor(3.2)
  CHECK(count_to_prune(Fraction(1, 20), 20) == 1);
  CHECK(count_to_prune(Fraction(1, 80), 64) == 0);   // floor(0.8): cannot halve further
  CHECK(count_to_prune(Fraction(3, 20), 20) == 3);
  CHECK(count_to_prune(Fraction::zero(), 100) == 0);
  CHECK(count_to_prune(Fraction::one(), 100) == 100);
  CHECK_THROWS_AS(count_to_prune(Fraction(-1, 20), 10), std::invalid_argument);
  CHECK_THROWS_AS(count_to_prune(Fraction(21, 20), 10), std::invalid_argument);
}

TEST_CASE("filter_pruner masks the lowest-relevance filter") {
  ModelGraph m = one_layer_net(3);
  RelevanceMap r(3);
  r.scores = {3.0, 1.0, 2.0};
  const PruneResult res = filter_pruner(m, r, Fraction(1, 3));
  CHECK(res.delta.newly_pruned == std::vector<std::size_t>{1});
  CHECK(res.model.is_alive(0));
  CHECK_FALSE(res.model.is_alive(1));
  CHECK(res.model.is_alive(2));
  // the input model is untouched
  CHECK(m.alive_count() == 3);
  CHECK(res.delta.resulting_rate == Fraction(1, 3));
}

TEST_CASE("filter_pruner at the current rate is the identity") {
  ModelGraph m = one_layer_net(4);
  RelevanceMap r(4);
  r.scores = {0.4, 0.1, 0.3, 0.2};
  const PruneResult first = filter_pruner(m, r, Fraction(1, 4));
  const PruneResult again = filter_pruner(first.model, r, Fraction(1, 4));
  CHECK(again.delta.newly_pruned.empty());
  CHECK(again.model.alive == first.model.alive);
}

TEST_CASE("filter_pruner rejects a target below the current fraction") {
  ModelGraph m = one_layer_net(4);
  RelevanceMap r(4);
  r.scores = {0.4, 0.1, 0.3, 0.2};
  const PruneResult half = filter_pruner(m, r, Fraction(1, 2));
  CHECK_THROWS_AS(filter_pruner(half.model, r, Fraction(1, 4)), std::invalid_argument);
}

TEST_CASE("filter_pruner matches an exhaustive re-ranking oracle") {
  testsupport::Rng rng(31337);
  for (int trial = 0; trial < 40; ++trial) {
    ModelGraph m = two_layer_net(3 + rng.below(3), 3 + rng.below(4));
    RelevanceMap r(m.f_num());
    for (double& v : r.scores) v = rng.uniform(-2.0, 2.0);
    // pre-mask a couple of filters to exercise the alive-only ranking
    for (std::size_t g = 0; g < m.f_num(); ++g)
      if (rng.uniform() < 0.2 && m.layer_alive_count(m.filter_ref(g).layer_id) > 1)
        m.set_filter_alive(g, false);
    const std::size_t already = m.f_num() - m.alive_count();
    const std::size_t target = already + rng.below(m.alive_count());
    const Fraction rate(static_cast<std::int64_t>(target),
                        static_cast<std::int64_t>(m.f_num()));
    const std::size_t expect_count = count_to_prune(rate, m.f_num());
    if (expect_count < already) continue;

    const std::size_t budget = [&] {
      std::size_t b = 0;
      for (std::size_t li : m.conv_layer_ids) b += m.layer_alive_count(li) - 1;
      return b;
    }();
    if (expect_count - already > budget) {
      CHECK_THROWS_AS(filter_pruner(m, r, rate), std::invalid_argument);
      continue;
    }
    const PruneResult res = filter_pruner(m, r, rate);
    CHECK(res.delta.newly_pruned == oracle_selection(m, r.scores, expect_count - already));
    for (std::size_t li : res.model.conv_layer_ids)
      CHECK(res.model.layer_alive_count(li) >= 1);
  }
}

TEST_CASE("8-filter net at 50%: masked set is the guarded bottom half") {
  ModelGraph m = two_layer_net(4, 4);
  RelevanceMap r(8);
  r.scores = {0.7, 0.1, 0.2, 0.3, 0.05, 0.6, 0.8, 0.9};
  const PruneResult res = filter_pruner(m, r, Fraction(1, 2));
  CHECK(res.delta.newly_pruned == oracle_selection(m, r.scores, 4));
  CHECK(res.delta.newly_pruned == std::vector<std::size_t>{1, 2, 3, 4});
}

TEST_CASE("the last-filter guard skips to the next candidate") {
  // layer 0 has a single filter carrying the lowest relevance; it must be
  // skipped in favour of layer 1 filters.
  ModelGraph m = two_layer_net(1, 4);
  RelevanceMap r(5);
  r.scores = {-5.0, 1.0, 2.0, 3.0, 4.0};
  const PruneResult res = filter_pruner(m, r, Fraction(2, 5));
  CHECK(res.delta.newly_pruned == std::vector<std::size_t>{1, 2});
  CHECK(res.model.is_alive(0));
  // demanding more than the guard allows is rejected with a diagnostic
  CHECK_THROWS_AS(filter_pruner(m, r, Fraction(5, 5)), std::invalid_argument);
}

TEST_CASE("ties break on ascending filter id") {
  ModelGraph m = one_layer_net(4);
  RelevanceMap r(4);
  r.scores = {0.5, 0.5, 0.5, 0.5};
  const PruneResult res = filter_pruner(m, r, Fraction(1, 2));
  CHECK(res.delta.newly_pruned == std::vector<std::size_t>{0, 1});
}

TEST_CASE("boost_low_relevance raises the lowest alive scores") {
  RelevanceMap r(3);
  r.scores = {0.1, 0.5, 0.2};
  const std::vector<std::uint8_t> alive{1, 1, 1};

  SECTION("T = 1") {
    const RelevanceMap b = boost_low_relevance(r, 1, alive);
    CHECK(b.scores[0] == kRelevanceSentinel);
    CHECK(b.scores[1] == 0.5);
    CHECK(b.scores[2] == 0.2);
    CHECK(r.scores[0] == 0.1);  // input untouched
  }
  SECTION("T = 0 is the identity") {
    const RelevanceMap b = boost_low_relevance(r, 0, alive);
    CHECK(b.scores == r.scores);
  }
  SECTION("T = 2 boosts the two lowest") {
    const RelevanceMap b = boost_low_relevance(r, 2, alive);
    CHECK(b.scores[0] == kRelevanceSentinel);
    CHECK(b.scores[1] == 0.5);
    CHECK(b.scores[2] == kRelevanceSentinel);
  }
  SECTION("T at or above the alive count is rejected") {
    CHECK_THROWS_AS(boost_low_relevance(r, 3, alive), std::invalid_argument);
  }
  SECTION("masked entries are not boosted") {
    const RelevanceMap b = boost_low_relevance(r, 1, {0, 1, 1});
    CHECK(b.scores[0] == 0.1);  // dead filter keeps its score
    CHECK(b.scores[2] == kRelevanceSentinel);
  }
}

TEST_CASE("compact with no masked filters is structurally identical") {
  testsupport::Rng rng(41);
  ModelGraph m = random_toy_net(rng, 1, 8, 2, true);
  const ModelGraph c = compact(m);
  REQUIRE(c.layers.size() == m.layers.size());
  CHECK(c.f_num() == m.f_num());
  for (std::size_t li = 0; li < m.layers.size(); ++li) {
    CHECK(c.layers[li].kind == m.layers[li].kind);
    CHECK(c.layers[li].weight.data == m.layers[li].weight.data);
    CHECK(c.layers[li].bias.data == m.layers[li].bias.data);
  }
}

TEST_CASE("compact forward-matches the masked model") {
  testsupport::Rng rng(43);
  for (int trial = 0; trial < 30; ++trial) {
    ModelGraph m = random_toy_net(rng, 1, 8, 2, trial % 3 == 0);
    for (std::size_t g = 0; g < m.f_num(); ++g)
      if (rng.uniform() < 0.35 && m.layer_alive_count(m.filter_ref(g).layer_id) > 1)
        m.set_filter_alive(g, false);
    const ModelGraph c = compact(m);
    CHECK(c.f_num() == m.alive_count());
    CHECK(c.alive_count() == c.f_num());
    for (int probe = 0; probe < 3; ++probe) {
      const Tensor in = random_input(m, rng);
      CHECK(max_abs_diff(logits(m, in), logits(c, in)) < 1e-10);
    }
  }
}

TEST_CASE("compact survives all-but-one filters masked per layer") {
  ModelGraph m = two_layer_net(4, 4);
  RelevanceMap r(8);
  r.scores = {1, 2, 3, 4, 5, 6, 7, 8};
  const PruneResult res = filter_pruner(m, r, Fraction(6, 8));
  const ModelGraph c = compact(res.model);
  CHECK(c.f_num() == 2);
  testsupport::Rng rng(3);
  const Tensor in = random_input(m, rng);
  CHECK(max_abs_diff(logits(res.model, in), logits(c, in)) < 1e-10);
}

TEST_CASE("compact handles flatten-based heads") {
  // masked channels of the last conv must drop whole H*W blocks of the
  // dense input
  testsupport::Rng rng(47);
  LayerSpec conv = LayerSpec::conv2d(1, 4, 3, 3, 1, 1, 1, 1);
  fill_uniform(conv.weight, rng);
  LayerSpec head = LayerSpec::dense(4 * 6 * 6, 3);
  fill_uniform(head.weight, rng);
  ModelGraph m = make_model({1, 6, 6}, {conv, LayerSpec::relu(), LayerSpec::flatten(), head});
  m.set_filter_alive(1, false);
  m.set_filter_alive(3, false);
  const ModelGraph c = compact(m);
  CHECK(c.layers.back().in_features == 2 * 6 * 6);
  const Tensor in = random_input(m, rng);
  CHECK(max_abs_diff(logits(m, in), logits(c, in)) < 1e-10);
}

TEST_CASE("pruning is a pure function of its inputs") {
  testsupport::Rng rng(53);
  ModelGraph m = two_layer_net(4, 5);
  RelevanceMap r(m.f_num());
  for (double& v : r.scores) v = rng.uniform(-1.0, 1.0);
  const PruneResult a = filter_pruner(m, r, Fraction(1, 3));
  const PruneResult b = filter_pruner(m, r, Fraction(1, 3));
  CHECK(a.model.alive == b.model.alive);
  CHECK(a.delta.newly_pruned == b.delta.newly_pruned);
}

TEST_CASE("relevance length mismatch is rejected") {
  ModelGraph m = one_layer_net(4);
  RelevanceMap r(3);
  CHECK_THROWS_AS(filter_pruner(m, r, Fraction(1, 4)), std::invalid_argument);
}
