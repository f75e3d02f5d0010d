// SPDX-License-Identifier: Apache-2.0
#include "hld/app/commands.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include "hld/data/ops.hpp"
#include "hld/data/serialize.hpp"
#include "hld/util/error.hpp"

namespace hld::app {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

[[noreturn]] void bad(const std::string& what) { throw Error(ErrorCode::InvalidConfig, what); }

void check_keys(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) bad(where + " must be an object");
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) bad("unknown " + where + " key '" + key + "'");
  }
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

std::vector<data::NoiseLevel> levels_from_json(const json& j) {
  std::vector<data::NoiseLevel> out;
  for (const auto& name : j) out.push_back(data::noise_level_from_string(name.get<std::string>()));
  return out;
}

ordered_json levels_json(const std::vector<data::NoiseLevel>& levels) {
  ordered_json j = ordered_json::array();
  for (auto l : levels) j.push_back(data::to_string(l));
  return j;
}

std::string filter_label(const std::vector<data::NoiseLevel>& levels) {
  std::string s;
  for (auto l : levels) s += (s.empty() ? "" : "+") + std::string(data::to_string(l));
  return s;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

ordered_json summary_json(const eval::Summary& s) { return {{"mean", s.mean}, {"std", s.std}, {"n", s.n}}; }

std::string mean_std(const eval::Summary& s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f±%.3f", s.mean, s.std);
  return buf;
}

}  // namespace

void RunConfig::validate() const {
  if (dataset.has_value() == generator.has_value()) bad("exactly one of 'dataset' and 'generator' must be given");
  if (seeds.empty()) bad("seeds must not be empty");
  if (generator) generator->validate();
  if (output_dir.empty()) bad("output_dir must not be empty");
  for (const auto& f : ablation_filters) {
    auto p = pretrain;
    p.noise_filter = f;
    p.validate();
  }
  eval_config().validate();
}

eval::EvalConfig RunConfig::eval_config() const {
  eval::EvalConfig c;
  c.variant = variant;
  c.hidden_dim = hidden_dim;
  c.pretrain = pretrain;
  c.finetune = finetune;
  c.folds = folds;
  c.seeds = seeds;
  c.age_probe = age_probe;
  return c;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  try {
    check_keys(j, {"format_version", "dataset", "generator", "variant", "hidden_dim", "pretrain", "finetune", "folds",
                   "seeds", "noise_filter", "output_dir", "age_probe", "export", "ablation_filters"},
               "config");
    if (j.value("format_version", 0) != RunConfig::kFormatVersion) bad("config format_version must be 1");
    if (j.contains("dataset")) c.dataset = j.at("dataset").get<std::string>();
    if (j.contains("generator")) c.generator = j.at("generator").get<data::GeneratorConfig>();
    if (j.contains("variant")) c.variant = pipeline::variant_from_string(j.at("variant").get<std::string>());
    read(j, "hidden_dim", c.hidden_dim);
    read(j, "folds", c.folds);
    read(j, "seeds", c.seeds);
    read(j, "age_probe", c.age_probe);
    read(j, "export", c.export_bundle);
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    if (j.contains("noise_filter")) c.pretrain.noise_filter = levels_from_json(j.at("noise_filter"));
    if (j.contains("pretrain")) {
      const auto& p = j.at("pretrain");
      check_keys(p, {"epochs", "lr", "batch_size", "triplets_per_subject_per_epoch", "weight_decay"}, "pretrain");
      read(p, "epochs", c.pretrain.epochs);
      read(p, "lr", c.pretrain.lr);
      read(p, "batch_size", c.pretrain.batch_size);
      read(p, "triplets_per_subject_per_epoch", c.pretrain.triplets_per_subject_per_epoch);
      read(p, "weight_decay", c.pretrain.weight_decay);
    }
    if (j.contains("finetune")) {
      const auto& f = j.at("finetune");
      check_keys(f, {"epochs", "lr", "batch_size", "weight_decay"}, "finetune");
      read(f, "epochs", c.finetune.epochs);
      read(f, "lr", c.finetune.lr);
      read(f, "batch_size", c.finetune.batch_size);
      read(f, "weight_decay", c.finetune.weight_decay);
    }
    if (j.contains("ablation_filters")) {
      for (const auto& f : j.at("ablation_filters")) c.ablation_filters.push_back(levels_from_json(f));
    }
  } catch (const json::exception& e) {
    bad(std::string("config: ") + e.what());
  } catch (const Error& e) {
    // Unknown names in the config are configuration errors, whatever the parser calls them.
    if (e.code() == ErrorCode::FormatError) bad(e.what());
    throw;
  }
  c.validate();
  return c;
}

ordered_json to_json(const RunConfig& c) {
  ordered_json j;
  j["format_version"] = RunConfig::kFormatVersion;
  if (c.dataset) j["dataset"] = c.dataset->string();
  if (c.generator) j["generator"] = ordered_json::parse(json(*c.generator).dump());
  j["variant"] = pipeline::to_string(c.variant);
  j["hidden_dim"] = c.hidden_dim;
  j["folds"] = c.folds;
  j["seeds"] = c.seeds;
  j["noise_filter"] = levels_json(c.pretrain.noise_filter);
  j["pretrain"] = {{"epochs", c.pretrain.epochs},
                   {"lr", c.pretrain.lr},
                   {"batch_size", c.pretrain.batch_size},
                   {"triplets_per_subject_per_epoch", c.pretrain.triplets_per_subject_per_epoch},
                   {"weight_decay", c.pretrain.weight_decay}};
  j["finetune"] = {{"epochs", c.finetune.epochs},
                   {"lr", c.finetune.lr},
                   {"batch_size", c.finetune.batch_size},
                   {"weight_decay", c.finetune.weight_decay}};
  j["output_dir"] = c.output_dir.string();
  j["age_probe"] = c.age_probe;
  j["export"] = c.export_bundle;
  ordered_json filters = ordered_json::array();
  for (const auto& f : c.ablation_filters) filters.push_back(levels_json(f));
  j["ablation_filters"] = filters;
  return j;
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) bad("override must look like key.path=value: '" + assignment + "'");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &j;
  std::size_t start = 0;
  for (;;) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) bad("empty key in override '" + assignment + "'");
    if (!node->is_object()) bad("override path '" + path + "' runs through a non-object");
    if (dot == std::string::npos) {
      if (value.is_null()) {
        node->erase(key);
      } else {
        (*node)[key] = value;
      }
      return;
    }
    node = &(*node)[key];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot read config " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) bad("config " + path.string() + " is not valid JSON");
  for (const auto& o : overrides) apply_override(j, o);
  return run_config_from_json(j);
}

data::Dataset resolve_dataset(const RunConfig& config) {
  config.validate();
  if (config.dataset) return data::load_dataset(*config.dataset);
  return data::generate_synthetic(*config.generator);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + path.parent_path().string() + ": " + ec.message());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
}

const std::vector<pipeline::ModelVariant>& ladder() {
  using V = pipeline::ModelVariant;
  static const std::vector<V> order{V::Single, V::SingleWithAge, V::Anchor, V::AnchorVM, V::AnchorVMABM};
  return order;
}

std::filesystem::path cmd_generate(const RunConfig& config, const std::optional<std::filesystem::path>& out,
                                   std::ostream& log) {
  config.validate();
  if (!config.generator) bad("generate needs a 'generator' section");
  const auto dir = out.value_or(config.output_dir / "dataset");
  const data::Dataset ds = data::generate_synthetic(*config.generator);
  data::save_dataset(ds, dir);
  std::size_t positives = 0;
  for (const auto& s : ds.subjects) positives += static_cast<std::size_t>(s.hearing_status);
  log << "wrote " << dir.string() << ": " << ds.manifest.subject_count << " subjects, " << ds.manifest.session_count
      << " sessions, " << ds.manifest.segment_count << " segments, feature_dim " << ds.manifest.feature_dim
      << ", frames " << ds.manifest.min_frames << ".." << ds.manifest.max_frames << ", " << positives
      << " hearing-impaired\n";
  return dir;
}

eval::EvalReport cmd_run(const RunConfig& config, std::ostream& log) {
  const data::Dataset ds = resolve_dataset(config);
  const auto ec = config.eval_config();
  eval::EvalReport report = eval::evaluate(ds, ec);

  const auto& dir = config.output_dir;
  write_text(dir / "report.json", eval::report_json(report));
  for (std::size_t i = 0; i < report.seeds.size(); ++i) {
    write_text(dir / ("seed_" + std::to_string(report.seeds[i].seed) + ".json"), eval::seed_report_json(report, i));
  }
  log << pipeline::to_string(report.variant) << ": overall F1 " << mean_std(report.overall) << " | young "
      << mean_std(report.groups[0]) << " mid " << mean_std(report.groups[1]) << " old " << mean_std(report.groups[2]);
  if (report.probe_abs_r) log << " | age probe |r| " << mean_std(*report.probe_abs_r);
  log << " (" << report.seeds.size() << " seeds, " << report.folds << " folds)\n";

  if (config.export_bundle) {
    const auto bundle = eval::train_final(ds, ec, config.seeds.front());
    pipeline::save_bundle(bundle, dir / "bundle.json");
    log << "wrote " << (dir / "bundle.json").string() << "\n";
    if (pipeline::uses_anchor(bundle.variant)) {
      const auto rows = eval::export_embeddings(bundle, ds, dir / "embeddings.csv");
      log << "wrote " << (dir / "embeddings.csv").string() << " (" << rows << " rows)\n";
    }
  }
  return report;
}

void cmd_ablation(const RunConfig& config, std::ostream& log) {
  const data::Dataset ds = resolve_dataset(config);
  std::vector<eval::EvalReport> rows;
  std::vector<std::string> names;
  for (auto variant : ladder()) {
    auto ec = config.eval_config();
    ec.variant = variant;
    rows.push_back(eval::evaluate(ds, ec));
    names.emplace_back(pipeline::to_string(variant));
  }

  ordered_json j;
  j["format_version"] = 1;
  j["folds"] = config.folds;
  j["seeds"] = config.seeds;
  ordered_json hashes;
  for (std::size_t s = 0; s < config.seeds.size(); ++s) {
    const auto h = rows.front().seeds[s].split_hash;
    for (const auto& r : rows) {
      if (r.seeds[s].split_hash != h) throw Error(ErrorCode::TrainingFailure, "variants saw different splits");
    }
    hashes[std::to_string(config.seeds[s])] = hex64(h);
  }
  j["split_hash"] = hashes;

  char line[256];
  log << "split hashes shared by all variants:";
  for (std::size_t s = 0; s < config.seeds.size(); ++s) {
    log << " " << config.seeds[s] << ":" << hex64(rows.front().seeds[s].split_hash);
  }
  log << "\n";
  std::snprintf(line, sizeof line, "%-14s %-13s %-13s %-13s %-13s %-13s\n", "variant", "overall", "young", "mid",
                "old", "age |r|");
  log << line;
  ordered_json table = ordered_json::array();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    const std::string probe = r.probe_abs_r ? mean_std(*r.probe_abs_r) : "-";
    std::snprintf(line, sizeof line, "%-14s %-13s %-13s %-13s %-13s %-13s\n", names[i].c_str(),
                  mean_std(r.overall).c_str(), mean_std(r.groups[0]).c_str(), mean_std(r.groups[1]).c_str(),
                  mean_std(r.groups[2]).c_str(), probe.c_str());
    log << line;
    table.push_back({{"variant", names[i]},
                     {"overall", summary_json(r.overall)},
                     {"young", summary_json(r.groups[0])},
                     {"mid", summary_json(r.groups[1])},
                     {"old", summary_json(r.groups[2])},
                     {"age_probe_abs_r", r.probe_abs_r ? summary_json(*r.probe_abs_r) : ordered_json(nullptr)},
                     {"per_seed_overall", r.overall_scores()}});
  }
  j["rows"] = table;

  ordered_json tests = ordered_json::array();
  log << "one-tailed Welch tests, Holm-adjusted per metric:\n";
  for (const auto& c : eval::ladder_comparisons(rows, names)) {
    std::snprintf(line, sizeof line, "  %-14s > %-14s %-8s t=%7.3f df=%6.2f p=%.4f p_holm=%.4f\n", c.better.c_str(),
                  c.worse.c_str(), c.metric.c_str(), c.test.t, c.test.df, c.test.p, c.adjusted_p);
    log << line;
    tests.push_back({{"better", c.better},
                     {"worse", c.worse},
                     {"metric", c.metric},
                     {"t", c.test.t},
                     {"df", c.test.df},
                     {"p", c.test.p},
                     {"p_holm", c.adjusted_p}});
  }
  j["comparisons"] = tests;

  if (!config.ablation_filters.empty()) {
    const auto variant =
        pipeline::uses_pretraining(config.variant) ? config.variant : pipeline::ModelVariant::AnchorVM;
    ordered_json columns = ordered_json::array();
    log << "pre-training noise filter sweep (" << pipeline::to_string(variant) << "):\n";
    for (const auto& filter : config.ablation_filters) {
      auto ec = config.eval_config();
      ec.variant = variant;
      ec.pretrain.noise_filter = filter;
      auto r = eval::evaluate(ds, ec);
      std::snprintf(line, sizeof line, "  %-16s overall %s young %s\n", filter_label(filter).c_str(),
                    mean_std(r.overall).c_str(), mean_std(r.groups[0]).c_str());
      log << line;
      columns.push_back({{"filter", levels_json(filter)},
                         {"overall", summary_json(r.overall)},
                         {"young", summary_json(r.groups[0])},
                         {"per_seed_overall", r.overall_scores()}});
    }
    j["noise_filter_sweep"] = {{"variant", pipeline::to_string(variant)}, {"columns", columns}};
  }
  write_text(config.output_dir / "ablation.json", j.dump(2) + "\n");
}

}  // namespace hld::app
