// SPDX-License-Identifier: Apache-2.0
#include "hld/eval/cv.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <map>
#include <numeric>
#include <random>

#include <Eigen/Dense>
#include <json.hpp>

#include "hld/data/ops.hpp"
#include "hld/eval/metrics.hpp"
#include "hld/util/error.hpp"
#include "hld/util/rng.hpp"

namespace hld::eval {

using pipeline::DatasetView;
using pipeline::ModelBundle;

FoldSplit split_sessions_kfold(std::span<const data::SessionId> session_ids, std::size_t k, std::uint64_t seed) {
  if (k == 0) throw Error(ErrorCode::InvalidConfig, "k must be positive");
  if (k > session_ids.size()) {
    throw Error(ErrorCode::TooFewSessions, std::to_string(session_ids.size()) + " sessions cannot fill " +
                                               std::to_string(k) + " folds");
  }
  std::vector<data::SessionId> ids(session_ids.begin(), session_ids.end());
  std::sort(ids.begin(), ids.end());
  Rng rng = make_rng(seed, "split");
  std::shuffle(ids.begin(), ids.end(), rng);
  FoldSplit folds(k);
  for (std::size_t i = 0; i < ids.size(); ++i) folds[i % k].push_back(ids[i]);
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

std::uint64_t split_hash(const FoldSplit& split) {
  std::uint64_t h = 1469598103934665603ULL;
  auto feed = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xffU;
      h *= 1099511628211ULL;
    }
  };
  for (const auto& fold : split) {
    feed(fold.size());
    for (auto id : fold) feed(id);
  }
  return h;
}

std::array<std::vector<data::SubjectId>, 3> age_tercile_groups(std::span<const data::SubjectRecord> subjects) {
  if (subjects.size() < 3) throw Error(ErrorCode::TooFewSubjects, "age terciles need at least 3 subjects");
  std::vector<const data::SubjectRecord*> sorted;
  for (const auto& s : subjects) sorted.push_back(&s);
  std::sort(sorted.begin(), sorted.end(), [](const auto* a, const auto* b) {
    return a->age != b->age ? a->age < b->age : a->subject_id < b->subject_id;
  });
  const std::size_t base = sorted.size() / 3, rem = sorted.size() % 3;
  std::array<std::vector<data::SubjectId>, 3> groups;
  std::size_t pos = 0;
  for (std::size_t g = 0; g < 3; ++g) {
    const std::size_t n = base + (g < rem ? 1 : 0);
    for (std::size_t i = 0; i < n; ++i) groups[g].push_back(sorted[pos++]->subject_id);
  }
  return groups;
}

double LinearProbe::predict(std::span<const double> x) const {
  if (x.size() != weights.size()) throw Error(ErrorCode::ShapeMismatch, "probe input dimension mismatch");
  double y = intercept;
  for (std::size_t i = 0; i < x.size(); ++i) y += weights[i] * x[i];
  return y;
}

LinearProbe fit_linear_probe(const std::vector<std::vector<double>>& x, std::span<const double> y, double ridge) {
  if (x.empty() || x.size() != y.size()) throw Error(ErrorCode::LengthMismatch, "probe needs one target per row");
  const auto n = static_cast<Eigen::Index>(x.size());
  const auto p = static_cast<Eigen::Index>(x[0].size());
  Eigen::MatrixXd X(n, p);
  Eigen::VectorXd Y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (static_cast<Eigen::Index>(x[static_cast<std::size_t>(i)].size()) != p) {
      throw Error(ErrorCode::ShapeMismatch, "ragged probe design matrix");
    }
    for (Eigen::Index j = 0; j < p; ++j) X(i, j) = x[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    Y(i) = y[static_cast<std::size_t>(i)];
  }
  const Eigen::RowVectorXd mx = X.colwise().mean();
  const double my = Y.mean();
  X.rowwise() -= mx;
  Y.array() -= my;
  Eigen::MatrixXd A = X.transpose() * X;
  A.diagonal().array() += ridge;
  const Eigen::VectorXd w = A.ldlt().solve(X.transpose() * Y);
  LinearProbe probe;
  probe.weights.assign(w.data(), w.data() + w.size());
  probe.intercept = my - mx.dot(w);
  return probe;
}

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::Pretrain: return "pretrain";
    case Stage::Finetune: return "finetune";
    case Stage::Predict: return "predict";
    case Stage::Probe: return "probe";
  }
  return "predict";
}

void EvalConfig::validate() const {
  if (hidden_dim == 0) throw Error(ErrorCode::InvalidConfig, "hidden_dim must be positive");
  if (folds < 2) throw Error(ErrorCode::InvalidConfig, "need at least 2 folds");
  if (seeds.empty()) throw Error(ErrorCode::InvalidConfig, "seeds must not be empty");
  pretrain.validate();
  finetune.validate();
}

namespace {

struct ProbePoint {
  data::SubjectId subject = 0;
  double age = 0.0;
  double predicted = 0.0;
};

struct JobOutput {
  std::vector<Prediction> predictions;
  std::vector<ProbePoint> probe;
  double pretrain_loss = std::nan("");
  double finetune_loss = std::nan("");
  std::string error;
};

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Held-out scoring set of one subject: its anchor plus the segments to score.
struct SubjectPlan {
  data::SubjectId subject = 0;
  std::size_t anchor = 0;
  std::vector<std::size_t> currents;
};

std::vector<SubjectPlan> plan_subjects(const data::Dataset& ds, std::span<const data::SubjectId> subjects) {
  std::vector<SubjectPlan> out;
  for (data::SubjectId id : subjects) {
    const auto segs = ds.segments_of(id);
    const auto anchor = data::find_anchor(ds, segs);
    if (!anchor) continue;
    SubjectPlan plan{id, *anchor, {}};
    for (std::size_t idx : segs) {
      if (idx != *anchor) plan.currents.push_back(idx);
    }
    out.push_back(std::move(plan));
  }
  return out;
}

// Encodes each segment once; returns probabilities and the head inputs.
struct Inference {
  std::vector<double> probability;
  std::vector<double> mean_embedding;
};

Inference infer_subject(const ModelBundle& bundle, const DatasetView& view, const SubjectPlan& plan) {
  ad::Tape tape(false);
  const bool anchored = pipeline::uses_anchor(bundle.variant);
  std::optional<ad::Tensor> anchor;
  if (anchored) anchor = pipeline::encode_segment(tape, view.touch(plan.anchor), bundle.encoder);
  std::optional<double> age;
  if (pipeline::uses_age_input(bundle.variant)) age = bundle.age_norm.normalize(view.age(plan.subject));
  Inference inf;
  for (std::size_t idx : plan.currents) {
    ad::Tensor cur = pipeline::encode_segment(tape, view.touch(idx), bundle.encoder);
    auto out = pipeline::forward_heads(tape, bundle, cur, anchor ? &*anchor : nullptr, age);
    inf.probability.push_back(sigmoid(out.logit.item()));
    const auto rep = out.representation.values();
    if (inf.mean_embedding.empty()) inf.mean_embedding.assign(rep.size(), 0.0);
    for (std::size_t i = 0; i < rep.size(); ++i) inf.mean_embedding[i] += rep[i];
  }
  for (double& v : inf.mean_embedding) v /= static_cast<double>(plan.currents.size());
  return inf;
}

JobOutput run_job(const data::Dataset& ds, const EvalConfig& config, std::uint64_t seed, std::size_t fold,
                  const FoldSplit& split) {
  JobOutput out;
  std::vector<data::SessionId> train_sessions;
  for (std::size_t f = 0; f < split.size(); ++f) {
    if (f != fold) train_sessions.insert(train_sessions.end(), split[f].begin(), split[f].end());
  }
  auto observer_for = [&](Stage stage) -> pipeline::SegmentObserver {
    if (!config.observer) return {};
    return [&config, &ds, seed, fold, stage](const data::Segment& seg) {
      const auto index = static_cast<std::size_t>(&seg - ds.segments.data());
      config.observer(AccessEvent{seed, fold, stage, index, seg.session_id});
    };
  };

  const std::size_t d = ds.manifest.feature_dim;
  const auto variant = config.variant;
  std::optional<nn::GruParams> encoder;
  if (pipeline::uses_pretraining(variant)) {
    DatasetView view(ds, train_sessions, observer_for(Stage::Pretrain));
    auto pc = config.pretrain;
    pc.seed = derive_seed(seed, "pretrain", fold);
    auto pre = pipeline::pretrain_vm(view, nn::init_gru(d, config.hidden_dim, derive_seed(seed, "init.encoder", fold)), pc);
    out.pretrain_loss = pre.loss_trace.back();
    encoder = std::move(pre.encoder);
  }
  ModelBundle bundle = pipeline::make_bundle(variant, d, config.hidden_dim, derive_seed(seed, "init", fold), encoder);
  {
    DatasetView view(ds, train_sessions, observer_for(Stage::Finetune));
    auto fc = config.finetune;
    fc.seed = derive_seed(seed, "finetune", fold);
    auto ft = pipeline::finetune(view, std::move(bundle), fc);
    out.finetune_loss = ft.loss_trace.back();
    bundle = std::move(ft.bundle);
  }

  DatasetView test(ds, split[fold], observer_for(Stage::Predict));
  std::vector<std::vector<double>> test_embeddings;
  for (const auto& plan : plan_subjects(ds, test.subjects())) {
    auto inf = infer_subject(bundle, test, plan);
    const int label = ds.subject(plan.subject).hearing_status;
    for (std::size_t i = 0; i < plan.currents.size(); ++i) {
      out.predictions.push_back({plan.currents[i], plan.subject, fold, inf.probability[i], label});
    }
    out.probe.push_back({plan.subject, static_cast<double>(ds.subject(plan.subject).age), 0.0});
    test_embeddings.push_back(std::move(inf.mean_embedding));
  }

  if (!config.age_probe) {
    out.probe.clear();
    return out;
  }
  // Fresh linear probe: subject-mean embeddings of the training folds -> age.
  DatasetView train(ds, train_sessions, observer_for(Stage::Probe));
  std::vector<std::vector<double>> x;
  std::vector<double> y;
  for (const auto& plan : plan_subjects(ds, train.subjects())) {
    x.push_back(infer_subject(bundle, train, plan).mean_embedding);
    y.push_back(ds.subject(plan.subject).age);
  }
  const LinearProbe probe = fit_linear_probe(x, y);
  for (std::size_t i = 0; i < out.probe.size(); ++i) out.probe[i].predicted = probe.predict(test_embeddings[i]);
  return out;
}

std::optional<double> try_f1(const std::vector<int>& pred, const std::vector<int>& label) {
  if (pred.empty()) return std::nullopt;
  try {
    return f1_score(pred, label);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Undefined) return std::nullopt;
    throw;
  }
}

Summary summarize_values(const std::vector<double>& v) {
  Summary s;
  s.n = v.size();
  if (v.empty()) return s;
  s.mean = mean(v);
  s.std = sample_std(v);
  return s;
}

}  // namespace

std::vector<double> EvalReport::overall_scores() const {
  std::vector<double> out;
  for (const auto& s : seeds) out.push_back(s.overall_f1);
  return out;
}

std::vector<double> EvalReport::group_scores(std::size_t group) const {
  std::vector<double> out;
  for (const auto& s : seeds) {
    if (s.group_f1.at(group)) out.push_back(*s.group_f1[group]);
  }
  return out;
}

ModelBundle train_final(const data::Dataset& ds, const EvalConfig& config, std::uint64_t seed) {
  config.validate();
  const auto sessions = ds.session_ids();
  const std::size_t d = ds.manifest.feature_dim;
  // Index k keeps these streams apart from the k CV folds.
  const std::size_t tag = config.folds;
  std::optional<nn::GruParams> encoder;
  if (pipeline::uses_pretraining(config.variant)) {
    DatasetView view(ds, sessions);
    auto pc = config.pretrain;
    pc.seed = derive_seed(seed, "pretrain", tag);
    encoder = pipeline::pretrain_vm(view, nn::init_gru(d, config.hidden_dim, derive_seed(seed, "init.encoder", tag)), pc)
                  .encoder;
  }
  DatasetView view(ds, sessions);
  auto fc = config.finetune;
  fc.seed = derive_seed(seed, "finetune", tag);
  return pipeline::finetune(view,
                            pipeline::make_bundle(config.variant, d, config.hidden_dim, derive_seed(seed, "init", tag), encoder),
                            fc)
      .bundle;
}

void summarize(EvalReport& report) {
  report.overall = summarize_values(report.overall_scores());
  for (std::size_t g = 0; g < 3; ++g) report.groups[g] = summarize_values(report.group_scores(g));
  std::vector<double> rs;
  for (const auto& s : report.seeds) {
    if (s.probe) rs.push_back(std::abs(s.probe->r));
  }
  report.probe_abs_r.reset();
  if (!rs.empty()) report.probe_abs_r = summarize_values(rs);
}

EvalReport evaluate(const data::Dataset& dataset, const EvalConfig& config) {
  config.validate();
  const auto session_ids = dataset.session_ids();
  const std::size_t n_seeds = config.seeds.size(), k = config.folds;
  std::vector<FoldSplit> splits;
  for (auto seed : config.seeds) splits.push_back(split_sessions_kfold(session_ids, k, seed));

  const std::size_t n_jobs = n_seeds * k;
  std::vector<JobOutput> outputs(n_jobs);
  auto run = [&](std::size_t j) {
    const std::size_t s = j / k, f = j % k;
    try {
      outputs[j] = run_job(dataset, config, config.seeds[s], f, splits[s]);
    } catch (const std::exception& e) {
      outputs[j].error = e.what();
    }
  };
  if (config.parallel) {
#pragma omp parallel for schedule(dynamic, 1)
    for (std::size_t j = 0; j < n_jobs; ++j) run(j);
  } else {
    for (std::size_t j = 0; j < n_jobs; ++j) run(j);
  }
  for (std::size_t j = 0; j < n_jobs; ++j) {
    if (!outputs[j].error.empty()) {
      throw Error(ErrorCode::TrainingFailure, "fold " + std::to_string(j % k) + ", seed " +
                                                  std::to_string(config.seeds[j / k]) + ": " + outputs[j].error);
    }
  }

  EvalReport report;
  report.variant = config.variant;
  report.folds = k;
  const auto groups = age_tercile_groups(dataset.subjects);
  std::map<data::SubjectId, std::size_t> group_of;
  for (std::size_t g = 0; g < 3; ++g) {
    for (auto id : groups[g]) group_of[id] = g;
  }
  const auto plans = plan_subjects(dataset, [&] {
    std::vector<data::SubjectId> ids;
    for (const auto& s : dataset.subjects) ids.push_back(s.subject_id);
    return ids;
  }());
  report.evaluated_subjects = plans.size();
  report.skipped_subjects = dataset.subjects.size() - plans.size();

  for (std::size_t s = 0; s < n_seeds; ++s) {
    SeedResult res;
    res.seed = config.seeds[s];
    res.split_hash = split_hash(splits[s]);
    std::vector<int> pred, label;
    std::array<std::vector<int>, 3> gp, gl;
    std::vector<ProbePoint> probe;
    for (std::size_t f = 0; f < k; ++f) {
      auto& out = outputs[s * k + f];
      std::vector<int> fp, fl;
      for (const auto& p : out.predictions) {
        const int yhat = p.probability >= 0.5 ? 1 : 0;
        pred.push_back(yhat);
        label.push_back(p.label);
        fp.push_back(yhat);
        fl.push_back(p.label);
        const std::size_t g = group_of.at(p.subject);
        gp[g].push_back(yhat);
        gl[g].push_back(p.label);
      }
      res.fold_f1.push_back(try_f1(fp, fl));
      if (!std::isnan(out.pretrain_loss)) res.pretrain_final_loss.push_back(out.pretrain_loss);
      res.finetune_final_loss.push_back(out.finetune_loss);
      probe.insert(probe.end(), out.probe.begin(), out.probe.end());
      res.predictions.insert(res.predictions.end(), out.predictions.begin(), out.predictions.end());
    }
    res.overall_f1 = f1_score(pred, label);
    for (std::size_t g = 0; g < 3; ++g) res.group_f1[g] = try_f1(gp[g], gl[g]);
    if (probe.size() >= 3) {
      std::vector<double> a, b;
      for (const auto& p : probe) {
        a.push_back(p.age);
        b.push_back(p.predicted);
      }
      try {
        res.probe = pearson_r(a, b);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::ConstantInput) throw;
      }
    }
    report.evaluated_segments = res.predictions.size();
    report.seeds.push_back(std::move(res));
  }
  summarize(report);
  return report;
}

// --- serialization ---

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr std::array<const char*, 3> kGroupNames{"young", "mid", "old"};

ordered_json opt_json(const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); }

ordered_json summary_json(const Summary& s) { return {{"mean", s.mean}, {"std", s.std}, {"n", s.n}}; }

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

ordered_json seed_json(const SeedResult& s, bool include_predictions) {
  ordered_json j;
  j["seed"] = s.seed;
  j["split_hash"] = hex64(s.split_hash);
  j["overall_f1"] = s.overall_f1;
  ordered_json groups;
  for (std::size_t g = 0; g < 3; ++g) groups[kGroupNames[g]] = opt_json(s.group_f1[g]);
  j["group_f1"] = groups;
  ordered_json folds = ordered_json::array();
  for (const auto& f : s.fold_f1) folds.push_back(opt_json(f));
  j["fold_f1"] = folds;
  if (s.probe) {
    j["age_probe"] = {{"r", s.probe->r}, {"t", s.probe->t}, {"p", s.probe->p}, {"n", s.probe->n}};
  } else {
    j["age_probe"] = nullptr;
  }
  j["pretrain_final_loss"] = s.pretrain_final_loss;
  j["finetune_final_loss"] = s.finetune_final_loss;
  if (include_predictions) {
    ordered_json rows = ordered_json::array();
    for (const auto& p : s.predictions) {
      rows.push_back({{"segment", p.segment}, {"subject", p.subject}, {"fold", p.fold},
                      {"probability", p.probability}, {"label", p.label}});
    }
    j["predictions"] = rows;
  }
  return j;
}

ordered_json header_json(const EvalReport& r) {
  ordered_json j;
  j["format_version"] = EvalReport::kFormatVersion;
  j["variant"] = pipeline::to_string(r.variant);
  j["folds"] = r.folds;
  j["counts"] = {{"evaluated_segments", r.evaluated_segments},
                 {"evaluated_subjects", r.evaluated_subjects},
                 {"skipped_subjects", r.skipped_subjects}};
  return j;
}

}  // namespace

std::string report_json(const EvalReport& report, bool include_predictions) {
  ordered_json j = header_json(report);
  std::vector<std::uint64_t> seeds;
  for (const auto& s : report.seeds) seeds.push_back(s.seed);
  j["seeds"] = seeds;
  j["overall_f1"] = summary_json(report.overall);
  ordered_json groups;
  for (std::size_t g = 0; g < 3; ++g) groups[kGroupNames[g]] = summary_json(report.groups[g]);
  j["group_f1"] = groups;
  j["age_probe_abs_r"] = report.probe_abs_r ? summary_json(*report.probe_abs_r) : ordered_json(nullptr);
  ordered_json per_seed = ordered_json::array();
  for (const auto& s : report.seeds) per_seed.push_back(seed_json(s, include_predictions));
  j["per_seed"] = per_seed;
  return j.dump(2) + "\n";
}

std::string seed_report_json(const EvalReport& report, std::size_t seed_index) {
  ordered_json j = header_json(report);
  j["result"] = seed_json(report.seeds.at(seed_index), true);
  return j.dump(2) + "\n";
}

std::size_t export_embeddings(const ModelBundle& bundle, const data::Dataset& dataset,
                              const std::filesystem::path& path) {
  if (!pipeline::uses_anchor(bundle.variant)) {
    throw Error(ErrorCode::VariantInputMismatch, "embedding export needs an anchor-variant bundle");
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  const std::size_t width = 2 * bundle.hidden_dim();
  out << "segment_index,session_id,subject_id,order_index,noise_level,age,hearing_status";
  for (std::size_t i = 0; i < width; ++i) out << ",e" << i;
  out << '\n';
  std::vector<data::SubjectId> ids;
  for (const auto& s : dataset.subjects) ids.push_back(s.subject_id);
  std::sort(ids.begin(), ids.end());
  std::size_t rows = 0;
  char buf[32];
  for (const auto& plan : plan_subjects(dataset, ids)) {
    const auto& subj = dataset.subject(plan.subject);
    const auto& anchor = dataset.segments[plan.anchor];
    for (std::size_t idx : plan.currents) {
      const auto& seg = dataset.segments[idx];
      const auto e = pipeline::embed(bundle, seg, &anchor);
      out << idx << ',' << seg.session_id << ',' << seg.subject_id << ',' << seg.order_index << ','
          << data::to_string(seg.noise_level) << ',' << subj.age << ',' << subj.hearing_status;
      for (double v : e) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        out << ',' << buf;
      }
      out << '\n';
      ++rows;
    }
  }
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
  return rows;
}

std::vector<Comparison> ladder_comparisons(std::span<const EvalReport> rows, std::span<const std::string> names) {
  if (rows.size() != names.size()) throw Error(ErrorCode::LengthMismatch, "one name per row");
  std::vector<Comparison> out;
  for (std::size_t metric = 0; metric < 4; ++metric) {
    const std::string metric_name = metric == 0 ? "overall" : kGroupNames[metric - 1];
    std::vector<Comparison> block;
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const auto a = metric == 0 ? rows[i].overall_scores() : rows[i].group_scores(metric - 1);
      const auto b = metric == 0 ? rows[i - 1].overall_scores() : rows[i - 1].group_scores(metric - 1);
      if (a.size() < 2 || b.size() < 2) continue;
      block.push_back({names[i], names[i - 1], metric_name, welch_one_tailed(a, b), 1.0});
    }
    std::vector<double> raw;
    for (const auto& c : block) raw.push_back(c.test.p);
    const auto adj = holm_adjust(raw);
    for (std::size_t i = 0; i < block.size(); ++i) {
      block[i].adjusted_p = adj[i];
      out.push_back(block[i]);
    }
  }
  return out;
}

}  // namespace hld::eval
