// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <boost/math/distributions/students_t.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/beta.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <set>

#include "hld/data/ops.hpp"
#include "hld/eval/cv.hpp"
#include "hld/eval/metrics.hpp"
#include "hld/eval/stats.hpp"
#include "hld/util/error.hpp"

namespace fs = std::filesystem;
using namespace hld::eval;
using hld::ErrorCode;
namespace data = hld::data;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const hld::Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no hld::Error thrown";
  return ErrorCode::TrainingFailure;
}

/// Two-sided p from integrating the t density on [0, |t|].
double quadrature_two_sided_p(double t, double df) {
  const double c = std::exp(std::lgamma((df + 1) / 2) - std::lgamma(df / 2)) / std::sqrt(df * M_PI);
  auto density = [&](double x) { return c * std::pow(1.0 + x * x / df, -(df + 1) / 2); };
  const double half = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(density, 0.0, std::abs(t), 15, 1e-14);
  return 1.0 - 2.0 * half;
}

/// Holm by the textbook rule: sort, multiply by (m - rank), running max, cap at 1.
std::vector<double> holm_by_hand(const std::vector<double>& p) {
  const std::size_t m = p.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
  std::vector<double> out(m);
  for (std::size_t rank = 0; rank < m; ++rank) {
    double v = 0.0;
    for (std::size_t j = 0; j <= rank; ++j) {
      v = std::max(v, std::min(1.0, static_cast<double>(m - j) * p[order[j]]));
    }
    out[order[rank]] = v;
  }
  return out;
}

data::Dataset dataset(std::uint64_t seed, std::size_t subjects, std::size_t entries = 8) {
  data::GeneratorConfig g;
  g.seed = seed;
  g.subjects = subjects;
  g.feature_dim = 4;
  g.schedule_entries = entries;
  g.min_duration_s = 4;
  g.max_duration_s = 6;
  return data::generate_synthetic(g);
}

EvalConfig quick_config(hld::pipeline::ModelVariant v) {
  EvalConfig c;
  c.variant = v;
  c.hidden_dim = 3;
  c.pretrain.epochs = 1;
  c.pretrain.lr = 3e-3;
  c.pretrain.triplets_per_subject_per_epoch = 2;
  c.finetune.epochs = 1;
  c.finetune.lr = 3e-3;
  c.folds = 3;
  c.seeds = {0, 1};
  return c;
}

}  // namespace

// --- F1 ---

TEST(F1, Examples) {
  const std::vector<int> l{1, 0, 1, 1}, perfect{1, 0, 1, 1};
  EXPECT_EQ(f1_score(perfect, l), 1.0);
  // TP=1, FP=1, FN=1.
  EXPECT_EQ(f1_score(std::vector<int>{1, 1, 0}, std::vector<int>{1, 0, 1}), 0.5);
  EXPECT_EQ(code_of([] { f1_score(std::vector<int>{0, 0}, std::vector<int>{0, 0}); }), ErrorCode::Undefined);
  EXPECT_EQ(code_of([] { f1_score(std::vector<int>{0}, std::vector<int>{0, 1}); }), ErrorCode::LengthMismatch);
  EXPECT_EQ(code_of([] { f1_score(std::vector<int>{2}, std::vector<int>{1}); }), ErrorCode::InvalidLabel);
}

TEST(F1, MatchesBruteForceCounting) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 40;
    std::vector<int> p(n), l(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = static_cast<int>(rng() % 2);
      l[i] = static_cast<int>(rng() % 2);
    }
    int tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < n; ++i) {
      tp += p[i] && l[i];
      fp += p[i] && !l[i];
      fn += !p[i] && l[i];
    }
    if (tp + fp + fn == 0) {
      EXPECT_EQ(code_of([&] { f1_score(p, l); }), ErrorCode::Undefined);
    } else {
      EXPECT_EQ(f1_score(p, l), 2.0 * tp / (2.0 * tp + fp + fn));
    }
  }
}

TEST(F1, ConstantPositivePredictorClosedForm) {
  // 48 positives of 100: F1 = 2 * 0.48 / (0.48 + 1).
  std::vector<int> labels(100, 0), all_positive(100, 1);
  std::fill(labels.begin(), labels.begin() + 48, 1);
  EXPECT_NEAR(f1_score(all_positive, labels), 2 * 0.48 / 1.48, 1e-15);
  EXPECT_NEAR(f1_score(all_positive, labels), 0.6486, 1e-4);
}

// --- t distribution and Pearson ---

TEST(Stats, IncompleteBetaAgainstBoost) {
  for (double a : {0.5, 1.0, 2.5, 15.0}) {
    for (double b : {0.5, 1.0, 3.0, 40.0}) {
      for (double x : {0.0, 0.01, 0.2, 0.5, 0.77, 0.99, 1.0}) {
        EXPECT_NEAR(regularized_incomplete_beta(a, b, x), boost::math::ibeta(a, b, x), 1e-12)
            << a << " " << b << " " << x;
      }
    }
  }
}

TEST(Stats, TwoSidedPMatchesQuadrature) {
  for (double df : {2.0, 5.0, 30.0}) {
    for (double t : {0.5, 1.0, 2.0}) {
      const double p = 2.0 * (1.0 - student_t_cdf(t, df));
      EXPECT_NEAR(p, quadrature_two_sided_p(t, df), 1e-6) << "df=" << df << " t=" << t;
    }
  }
}

TEST(Stats, TCdfAgainstBoostIncludingFractionalDf) {
  for (double df : {1.0, 2.7, 9.3, 120.0}) {
    boost::math::students_t dist(df);
    for (double t : {-4.0, -1.2, 0.0, 0.3, 2.2, 6.0}) {
      EXPECT_NEAR(student_t_cdf(t, df), boost::math::cdf(dist, t), 1e-10);
    }
  }
}

TEST(Pearson, Examples) {
  const std::vector<double> x{1, 2, 3, 4};
  std::vector<double> lin, neg;
  for (double v : x) {
    lin.push_back(2 * v + 3);
    neg.push_back(-v);
  }
  auto perfect = pearson_r(x, lin);
  EXPECT_NEAR(perfect.r, 1.0, 1e-15);
  EXPECT_LT(perfect.p, 1e-12);
  EXPECT_NEAR(pearson_r(x, neg).r, -1.0, 1e-15);

  auto r = pearson_r(x, std::vector<double>{2, 1, 4, 3});
  EXPECT_NEAR(r.r, 0.6, 1e-15);
  EXPECT_NEAR(r.t, 0.6 * std::sqrt(2.0) / std::sqrt(0.64), 1e-12);
  EXPECT_NEAR(r.t, 1.06066, 1e-5);
  EXPECT_NEAR(r.p, quadrature_two_sided_p(r.t, 2.0), 1e-8);
  EXPECT_NEAR(r.p, 0.4, 1e-12);
}

TEST(Pearson, Errors) {
  EXPECT_EQ(code_of([] { pearson_r(std::vector<double>{1, 2}, std::vector<double>{1, 2}); }), ErrorCode::TooFewPoints);
  EXPECT_EQ(code_of([] { pearson_r(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}); }),
            ErrorCode::ConstantInput);
  EXPECT_EQ(code_of([] { pearson_r(std::vector<double>{1, 2, 3}, std::vector<double>{1, 2}); }),
            ErrorCode::TooFewPoints);
}

TEST(Pearson, AffineInvariance) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> x(12), y(12), xa(12), yn(12);
    for (std::size_t i = 0; i < 12; ++i) {
      x[i] = n(rng);
      y[i] = 0.5 * x[i] + n(rng);
      xa[i] = 3.7 * x[i] - 11.0;
      yn[i] = -0.2 * y[i] + 4.0;
    }
    const double r = pearson_r(x, y).r;
    EXPECT_NEAR(pearson_r(xa, y).r, r, 1e-12);
    EXPECT_NEAR(pearson_r(x, yn).r, -r, 1e-12);
  }
}

// --- Welch and Holm ---

TEST(Welch, Examples) {
  const std::vector<double> a{0.71, 0.74, 0.69, 0.77, 0.70};
  EXPECT_EQ(welch_one_tailed(a, a).p, 0.5);
  std::vector<double> b = a, c;
  for (double v : a) c.push_back(v + 10.0);
  EXPECT_LT(welch_one_tailed(c, b).p, 1e-3);
  EXPECT_EQ(code_of([] { welch_one_tailed(std::vector<double>{1}, std::vector<double>{1, 2}); }),
            ErrorCode::TooFewSamples);
}

TEST(Welch, AgainstBoostStudentT) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> a(3 + trial % 5), b(2 + trial % 7);
    for (auto& v : a) v = 0.3 + n(rng);
    for (auto& v : b) v = 2.0 * n(rng);
    const double ma = mean(a), mb = mean(b);
    const double va = std::pow(sample_std(a), 2) / a.size(), vb = std::pow(sample_std(b), 2) / b.size();
    const double t = (ma - mb) / std::sqrt(va + vb);
    const double df = (va + vb) * (va + vb) /
                      (va * va / static_cast<double>(a.size() - 1) + vb * vb / static_cast<double>(b.size() - 1));
    auto w = welch_one_tailed(a, b);
    EXPECT_NEAR(w.t, t, 1e-12);
    EXPECT_NEAR(w.df, df, 1e-10);
    EXPECT_NEAR(w.p, boost::math::cdf(boost::math::complement(boost::math::students_t(df), t)), 1e-10);
  }
}

TEST(Holm, Examples) {
  auto adj = holm_adjust(std::vector<double>{0.01, 0.04});
  EXPECT_NEAR(adj[0], 0.02, 1e-15);
  EXPECT_NEAR(adj[1], 0.04, 1e-15);
}

TEST(Holm, MatchesHandRuleAndIsMonotone) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 0.3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> p(1 + trial % 9);
    for (auto& v : p) v = u(rng);
    if (trial % 10 == 0) p.back() = p.front();  // ties
    const auto adj = holm_adjust(p);
    const auto hand = holm_by_hand(p);
    ASSERT_EQ(adj.size(), hand.size());
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(adj[i], hand[i]);
    for (std::size_t i = 0; i < p.size(); ++i) {
      for (std::size_t j = 0; j < p.size(); ++j) {
        if (p[i] < p[j]) EXPECT_LE(adj[i], adj[j]);
      }
    }
  }
}

// --- splits, groups, probe ---

TEST(Split, PartitionAndRemainder) {
  std::vector<data::SessionId> ids(10);
  std::iota(ids.begin(), ids.end(), 100);
  auto s = split_sessions_kfold(ids, 5, 3);
  std::multiset<data::SessionId> all;
  for (const auto& f : s) {
    EXPECT_EQ(f.size(), 2u);
    all.insert(f.begin(), f.end());
  }
  EXPECT_EQ(all, std::multiset<data::SessionId>(ids.begin(), ids.end()));
  EXPECT_EQ(split_sessions_kfold(ids, 5, 3), s);
  EXPECT_EQ(split_hash(split_sessions_kfold(ids, 5, 3)), split_hash(s));
  EXPECT_NE(split_sessions_kfold(ids, 5, 4), s);

  ids.push_back(999);
  std::vector<std::size_t> sizes;
  for (const auto& f : split_sessions_kfold(ids, 5, 0)) sizes.push_back(f.size());
  EXPECT_EQ(sizes, (std::vector<std::size_t>{3, 2, 2, 2, 2}));
  EXPECT_EQ(code_of([&] { split_sessions_kfold(std::span(ids).first(3), 5, 0); }), ErrorCode::TooFewSessions);
}

TEST(Groups, TercilesByAge) {
  std::vector<data::SubjectRecord> s;
  const std::vector<int> ages{60, 20, 50, 30, 70, 45};
  for (std::size_t i = 0; i < ages.size(); ++i) s.push_back({static_cast<data::SubjectId>(i), ages[i], 0});
  auto g = age_tercile_groups(s);
  EXPECT_EQ(g[0], (std::vector<data::SubjectId>{1, 3}));
  EXPECT_EQ(g[1], (std::vector<data::SubjectId>{5, 2}));
  EXPECT_EQ(g[2], (std::vector<data::SubjectId>{0, 4}));
  s.push_back({6, 45, 1});
  g = age_tercile_groups(s);
  EXPECT_EQ(g[0].size(), 3u);
  EXPECT_EQ(g[1].size(), 2u);
  EXPECT_EQ(g[2].size(), 2u);
  // Tie at 45 broken by id: 5 before 6.
  EXPECT_EQ(g[0].back(), 5u);
  EXPECT_EQ(code_of([&] { age_tercile_groups(std::span(s).first(2)); }), ErrorCode::TooFewSubjects);
}

TEST(Probe, RecoversExactLinearMap) {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<std::vector<double>> x;
  std::vector<double> y;
  for (int i = 0; i < 40; ++i) {
    std::vector<double> row{n(rng), n(rng), n(rng)};
    y.push_back(40.0 + 3.0 * row[0] - 2.0 * row[1] + 0.5 * row[2]);
    x.push_back(row);
  }
  auto p = fit_linear_probe(x, y);
  EXPECT_NEAR(p.intercept, 40.0, 1e-5);
  EXPECT_NEAR(p.weights[0], 3.0, 1e-5);
  EXPECT_NEAR(p.weights[1], -2.0, 1e-5);
  EXPECT_NEAR(p.weights[2], 0.5, 1e-5);
}

// --- evaluate ---

TEST(Evaluate, EveryHeldOutSegmentPredictedOncePerSeed) {
  auto ds = dataset(5, 12);
  auto c = quick_config(hld::pipeline::ModelVariant::AnchorVMABM);
  auto r = evaluate(ds, c);
  std::size_t expected = 0;
  for (const auto& s : ds.subjects) {
    if (data::find_anchor(ds, ds.segments_of(s.subject_id))) expected += ds.segments_of(s.subject_id).size() - 1;
  }
  ASSERT_EQ(r.seeds.size(), 2u);
  for (const auto& s : r.seeds) {
    std::set<std::size_t> seen;
    for (const auto& p : s.predictions) EXPECT_TRUE(seen.insert(p.segment).second);
    EXPECT_EQ(seen.size(), expected);
    EXPECT_GE(s.overall_f1, 0.0);
    EXPECT_LE(s.overall_f1, 1.0);
    ASSERT_TRUE(s.probe.has_value());
    EXPECT_LE(std::abs(s.probe->r), 1.0);
  }
  EXPECT_EQ(r.evaluated_segments, expected);
  EXPECT_GE(r.overall.std, 0.0);
}

TEST(Evaluate, SingleSeedHasZeroStd) {
  auto ds = dataset(6, 12);
  auto c = quick_config(hld::pipeline::ModelVariant::Single);
  c.seeds = {7};
  auto r = evaluate(ds, c);
  EXPECT_EQ(r.overall.std, 0.0);
  EXPECT_EQ(r.overall.n, 1u);
}

TEST(Evaluate, NoTestFoldSegmentTouchedDuringTraining) {
  auto ds = dataset(7, 12);
  auto c = quick_config(hld::pipeline::ModelVariant::AnchorVM);
  std::mutex mu;
  std::vector<AccessEvent> events;
  c.observer = [&](const AccessEvent& e) {
    std::lock_guard lock(mu);
    events.push_back(e);
  };
  evaluate(ds, c);
  std::map<std::uint64_t, FoldSplit> splits;
  for (auto seed : c.seeds) splits[seed] = split_sessions_kfold(ds.session_ids(), c.folds, seed);
  std::set<Stage> stages;
  for (const auto& e : events) {
    const auto& held_out = splits[e.seed][e.fold];
    const bool in_test = std::find(held_out.begin(), held_out.end(), e.session) != held_out.end();
    stages.insert(e.stage);
    EXPECT_EQ(ds.segments[e.segment].session_id, e.session);
    if (e.stage == Stage::Predict) {
      EXPECT_TRUE(in_test);
    } else {
      EXPECT_FALSE(in_test) << to_string(e.stage) << " touched a held-out segment";
    }
  }
  EXPECT_EQ(stages.size(), 4u);
}

TEST(Evaluate, ParallelMatchesSerial) {
  auto ds = dataset(8, 12);
  auto c = quick_config(hld::pipeline::ModelVariant::AnchorVMABM);
  c.parallel = false;
  const auto serial = report_json(evaluate(ds, c), true);
  c.parallel = true;
  EXPECT_EQ(report_json(evaluate(ds, c), true), serial);
}

TEST(Evaluate, VariantsShareSplitsAndHeldOutSets) {
  auto ds = dataset(9, 12);
  auto a = evaluate(ds, quick_config(hld::pipeline::ModelVariant::Single));
  auto b = evaluate(ds, quick_config(hld::pipeline::ModelVariant::Anchor));
  for (std::size_t s = 0; s < a.seeds.size(); ++s) {
    EXPECT_EQ(a.seeds[s].split_hash, b.seeds[s].split_hash);
    std::set<std::size_t> sa, sb;
    for (const auto& p : a.seeds[s].predictions) sa.insert(p.segment);
    for (const auto& p : b.seeds[s].predictions) sb.insert(p.segment);
    EXPECT_EQ(sa, sb);
  }
}

TEST(Evaluate, TrainingFailureNamesFoldAndSeed) {
  auto ds = dataset(10, 12);
  auto c = quick_config(hld::pipeline::ModelVariant::AnchorVM);
  c.pretrain.noise_filter = {data::NoiseLevel::Db75};
  for (auto& s : ds.segments) {
    if (s.noise_level == data::NoiseLevel::Db75) s.noise_level = data::NoiseLevel::Db65;
  }
  try {
    evaluate(ds, c);
    FAIL();
  } catch (const hld::Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TrainingFailure);
    EXPECT_NE(std::string(e.what()).find("fold 0, seed 0"), std::string::npos) << e.what();
  }
}

TEST(Export, RowsAndDeterminism) {
  auto ds = dataset(11, 6);
  auto bundle = hld::pipeline::make_bundle(hld::pipeline::ModelVariant::AnchorVM, 4, 3, 0);
  const auto a = fs::temp_directory_path() / "hld_test_emb_a.csv";
  const auto b = fs::temp_directory_path() / "hld_test_emb_b.csv";
  const auto rows = export_embeddings(bundle, ds, a);
  export_embeddings(bundle, ds, b);
  std::size_t expected = 0;
  for (const auto& s : ds.subjects) {
    if (data::find_anchor(ds, ds.segments_of(s.subject_id))) expected += ds.segments_of(s.subject_id).size() - 1;
  }
  EXPECT_EQ(rows, expected);
  std::ifstream fa(a), fb(b);
  std::string la, lb;
  std::size_t lines = 0;
  std::getline(fa, la);
  EXPECT_EQ(la.rfind("segment_index,session_id,subject_id,order_index,noise_level,age,hearing_status,e0,", 0), 0u);
  std::getline(fb, lb);
  while (std::getline(fa, la) && std::getline(fb, lb)) {
    EXPECT_EQ(la, lb);
    ++lines;
  }
  EXPECT_EQ(lines, expected);
  auto single = hld::pipeline::make_bundle(hld::pipeline::ModelVariant::Single, 4, 3, 0);
  EXPECT_EQ(code_of([&] { export_embeddings(single, ds, a); }), ErrorCode::VariantInputMismatch);
  fs::remove(a);
  fs::remove(b);
}

TEST(Export, IdenticalSegmentsGiveIdenticalRows) {
  auto ds = dataset(12, 2);
  const auto subject = ds.subjects.front().subject_id;
  auto segs = ds.segments_of(subject);
  const auto anchor = data::select_anchor(ds, segs);
  // Copy one non-anchor segment's frames and level onto another.
  std::vector<std::size_t> others;
  for (auto i : segs) {
    if (i != anchor) others.push_back(i);
  }
  ASSERT_GE(others.size(), 2u);
  ds.segments[others[1]].frames = ds.segments[others[0]].frames;
  ds.segments[others[1]].noise_level = ds.segments[others[0]].noise_level;
  auto bundle = hld::pipeline::make_bundle(hld::pipeline::ModelVariant::Anchor, 4, 3, 2);
  EXPECT_EQ(hld::pipeline::embed(bundle, ds.segments[others[0]], &ds.segments[anchor]),
            hld::pipeline::embed(bundle, ds.segments[others[1]], &ds.segments[anchor]));
}

TEST(Ladder, AdjacentRowsHolmWithinMetric) {
  auto make = [](std::vector<double> overall) {
    EvalReport r;
    for (std::size_t i = 0; i < overall.size(); ++i) {
      SeedResult s;
      s.seed = i;
      s.overall_f1 = overall[i];
      s.group_f1 = {overall[i], overall[i], overall[i]};
      r.seeds.push_back(s);
    }
    summarize(r);
    return r;
  };
  std::vector<EvalReport> rows{make({0.5, 0.52, 0.51}), make({0.6, 0.61, 0.63}), make({0.6, 0.62, 0.61})};
  std::vector<std::string> names{"a", "b", "c"};
  auto cmp = ladder_comparisons(rows, names);
  ASSERT_EQ(cmp.size(), 8u);  // 2 adjacent pairs x 4 metrics
  std::vector<double> raw;
  for (const auto& c : cmp) {
    if (c.metric == "overall") raw.push_back(c.test.p);
  }
  ASSERT_EQ(raw.size(), 2u);
  const auto hand = holm_by_hand(raw);
  std::size_t k = 0;
  for (const auto& c : cmp) {
    if (c.metric == "overall") EXPECT_EQ(c.adjusted_p, hand[k++]);
  }
  EXPECT_EQ(cmp.front().better, "b");
  EXPECT_EQ(cmp.front().worse, "a");
}
