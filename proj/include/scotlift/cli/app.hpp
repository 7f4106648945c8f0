/*
 * Copyright 2026 The scotlift Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

// Run directory layout:
//
//   config.resolved.json
//   data/{pretrain,pretrain_val,finetune}/     archives written by gen-data
//   checkpoints/pretrain.ckpt, checkpoints/finetune_<id>.ckpt
//   logs/loss_<id>.csv                          step,split,loss,lr
//   logs/valcurve.csv                           step,model,loss
//   reports/                                    metrics, curves, error maps, summary
//
// Fine-tuned model ids are <init>_r<sparsity>, e.g. mixed_r0 or random_r0.8.

#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "scotlift/cli/config.hpp"
#include "scotlift/eval/evaluate.hpp"

namespace scotlift::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kUsage = 2, kData = 3, kNumerical = 4, kInternal = 1 };

inline std::string model_id(const train::TrainConfig& t) {
  return train::to_string(t.init) + "_r" + eval::fmt(t.sparsity);
}

struct RunDir {
  fs::path root;
  fs::path config() const { return root / "config.resolved.json"; }
  fs::path data(const std::string& name) const { return root / "data" / name; }
  fs::path checkpoints() const { return root / "checkpoints"; }
  fs::path logs() const { return root / "logs"; }
  fs::path reports() const { return root / "reports"; }

  void create() const {
    std::error_code ec;
    for (const auto& d : {root, checkpoints(), logs(), reports()}) {
      fs::create_directories(d, ec);
      if (ec) throw IoError("cannot create " + d.string() + ": " + ec.message());
    }
  }
};

namespace detail {

inline void write_text(const fs::path& p, const std::string& text) { data::detail::write_file(p, text.data(), text.size()); }

inline Json read_json_file(const fs::path& p) {
  if (!fs::exists(p)) throw IoError("config file not found: " + p.string());
  const auto raw = data::detail::read_file(p);
  try {
    return Json::parse(raw.begin(), raw.end());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config", std::string("invalid JSON in ") + p.string() + ": " + e.what());
  }
}

inline std::string or_default(const std::string& configured, const fs::path& fallback) {
  return configured.empty() ? fallback.string() : configured;
}

inline data::Series read_archive_at(const std::string& path) {
  if (!fs::exists(fs::path(path) / "manifest.json")) throw IoError("archive not found: " + path);
  return data::read_archive(path);
}

using Curve = std::vector<std::pair<long, double>>;

// logs/valcurve.csv as model -> curve.
inline std::map<std::string, Curve> read_valcurves(const fs::path& p) {
  std::map<std::string, Curve> out;
  std::ifstream in(p);
  if (!in) return out;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string step, model, loss;
    std::getline(ss, step, ',');
    std::getline(ss, model, ',');
    std::getline(ss, loss, ',');
    try {
      out[model].emplace_back(std::stol(step), std::stod(loss));
    } catch (const std::exception&) {
      throw FormatError("malformed row in " + p.string() + ": " + line);
    }
  }
  return out;
}

inline void write_valcurves(const fs::path& p, const std::map<std::string, Curve>& curves) {
  std::string text = "step,model,loss\n";
  for (const auto& [model, curve] : curves)
    for (const auto& [step, loss] : curve) text += std::to_string(step) + "," + model + "," + eval::fmt(loss) + "\n";
  write_text(p, text);
}

// Writes the per-step log and replaces this model's rows in logs/valcurve.csv.
inline void record_run(const RunDir& dir, const std::string& id, const train::RunResult& r) {
  std::string text = "step,split,loss,lr\n";
  for (const auto& row : r.log)
    text += std::to_string(row.step) + "," + row.split + "," + eval::fmt(row.loss) + "," + eval::fmt(row.lr) + "\n";
  write_text(dir.logs() / ("loss_" + id + ".csv"), text);
  auto curves = read_valcurves(dir.logs() / "valcurve.csv");
  curves[id] = r.val_curve;
  write_valcurves(dir.logs() / "valcurve.csv", curves);
}

inline train::LogSink progress_sink(std::ostream& out, const std::string& id, long every) {
  return [&out, id, every](const train::LogRow& row) {
    if (row.split == "val" || row.step % every == 0)
      out << id << " step " << row.step << " " << row.split << " loss " << eval::fmt(row.loss) << "\n";
  };
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Subcommands

inline void cmd_gen_data(const RunConfig& c, const RunDir& dir, std::ostream& out) {
  const auto cp = corpus_params(c.data);
  const auto stack = stack_params(c.data);
  const auto& d = c.data;
  struct Job {
    std::string name;
    std::function<data::Series()> make;
  };
  const std::vector<Job> jobs{
      {"pretrain",
       [&] { return synthetic::make_pretrain_corpus(cp, d.pretrain_trajectories, d.pretrain_snapshots, mix_seed(c.seed, 11)); }},
      {"pretrain_val",
       [&] {
         return synthetic::make_pretrain_corpus(cp, std::max<std::size_t>(d.pretrain_val_trajectories, 1),
                                                d.pretrain_snapshots, mix_seed(c.seed, 12));
       }},
      {"finetune", [&] {
         return synthetic::make_finetune_corpus(cp, stack, d.finetune_trajectories + d.finetune_val_trajectories,
                                                d.finetune_snapshots, mix_seed(c.seed, 13));
       }}};
  for (const auto& job : jobs) {
    const auto path = dir.data(job.name);
    std::error_code ec;
    fs::create_directories(path, ec);
    if (ec) throw IoError("cannot create " + path.string() + ": " + ec.message());
    const auto s = job.make();
    data::write_archive(s, path);
    out << "wrote " << path.string() << " " << to_string(s.values.shape()) << "\n";
  }
}

inline void cmd_pretrain(const RunConfig& c, const RunDir& dir, const std::string& resume, std::ostream& out) {
  const auto corpus = detail::read_archive_at(detail::or_default(c.paths.pretrain_archive, dir.data("pretrain")));
  const auto val_path = detail::or_default(c.paths.pretrain_val_archive, dir.data("pretrain_val"));
  std::optional<data::Series> val;
  if (fs::exists(fs::path(val_path) / "manifest.json")) val = data::read_archive(val_path);
  std::optional<train::Checkpoint> from;
  if (!resume.empty()) from = train::load_checkpoint(resume);
  const auto r = train::run_pretrain(corpus, val ? &*val : nullptr, c.model, c.pretrain,
                                     detail::progress_sink(out, "pretrain", 100), from ? &*from : nullptr);
  train::save_checkpoint(r.checkpoint, dir.checkpoints() / "pretrain.ckpt");
  detail::record_run(dir, "pretrain", r);
  out << "pretrain done: " << (r.val_curve.empty() ? "no validation" : "final val " + eval::fmt(r.final_val())) << "\n";
}

inline std::pair<data::Series, data::Series> finetune_split(const RunConfig& c, const RunDir& dir) {
  const auto all = detail::read_archive_at(detail::or_default(c.paths.archive, dir.data("finetune")));
  auto [tr, va] = data::split_chronological(all, *c.data.split);
  if (tr.times() == 0) throw LookupError("training split selects no timestamps from the fine-tuning archive");
  if (va.times() == 0) throw LookupError("validation split selects no timestamps from the fine-tuning archive");
  return {std::move(tr), std::move(va)};
}

inline void cmd_finetune(const RunConfig& c, const RunDir& dir, const std::string& resume, std::ostream& out) {
  auto [tr, va] = finetune_split(c, dir);
  std::optional<train::Checkpoint> pre;
  if (c.finetune.init == train::InitMode::Mixed)
    pre = train::load_checkpoint(detail::or_default(c.paths.pretrained, dir.checkpoints() / "pretrain.ckpt"));
  std::optional<train::Checkpoint> from;
  if (!resume.empty()) from = train::load_checkpoint(resume);
  const auto id = model_id(c.finetune);
  const auto r = train::run_finetune(tr, va, pre ? &*pre : nullptr, c.model, c.lift, c.finetune,
                                     detail::progress_sink(out, id, 100), from ? &*from : nullptr);
  train::save_checkpoint(r.checkpoint, dir.checkpoints() / ("finetune_" + id + ".ckpt"));
  detail::record_run(dir, id, r);
  out << id << " done: final val " << eval::fmt(r.final_val()) << "\n";
}

inline std::vector<std::pair<std::string, fs::path>> finetuned_checkpoints(const RunDir& dir) {
  std::vector<std::pair<std::string, fs::path>> out;
  if (!fs::is_directory(dir.checkpoints())) return out;
  for (const auto& e : fs::directory_iterator(dir.checkpoints())) {
    const auto name = e.path().filename().string();
    if (name.rfind("finetune_", 0) == 0 && e.path().extension() == ".ckpt")
      out.emplace_back(name.substr(9, name.size() - 9 - 5), e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Metrics for every fine-tuned checkpoint at every configured masking ratio.
inline void cmd_evaluate(const RunConfig& c, const RunDir& dir, std::ostream& out) {
  const auto ckpts = finetuned_checkpoints(dir);
  if (ckpts.empty()) throw IoError("no fine-tuned checkpoints under " + dir.checkpoints().string());
  auto [tr, va] = finetune_split(c, dir);
  eval::Report report;
  for (const auto& [id, path] : ckpts) {
    const auto ck = train::load_checkpoint(path);
    if (!ck.scaler) throw CorruptionError("checkpoint has no scaler statistics: " + path.string());
    const auto m = train::model_from_checkpoint(ck);
    data::Series scaled = va;
    data::apply_scaler(scaled.values, *ck.scaler, data::Direction::Forward);
    const auto step = eval::lifted_step(m, scaled.sigmas);
    for (std::size_t r = 0; r < c.eval.sparsity_ratios.size(); ++r) {
      const double ratio = c.eval.sparsity_ratios[r];
      eval::EvalOptions opt{r == 0 ? c.eval.leads : 1, ratio, c.eval.max_samples, c.seed, r == 0};
      const std::string tag = r == 0 ? id : id + "@" + eval::fmt(ratio);
      const auto table = eval::evaluate_rollouts(step, scaled, *ck.scaler, tag, opt);
      for (auto& row : eval::sweep_rows(table, tag, ratio)) {
        row.model = id;
        report.sweep.push_back(std::move(row));
      }
      if (r == 0) {
        report.metrics.merge(table);
        const auto starts = eval::rollout_starts(scaled, 1, 1);
        const auto x0 = eval::masked_state(scaled.state(starts[0]), ratio, eval::sample_mask_seed(c.seed, starts[0]));
        const auto maps = eval::error_maps(step(x0), scaled.state(starts[0] + 1), *ck.scaler, scaled.sigmas, scaled.variables);
        eval::emit_error_maps(maps, dir.reports() / ("errormaps_" + id));
      }
    }
    out << "evaluated " << id << "\n";
  }
  report.val_curves = detail::read_valcurves(dir.logs() / "valcurve.csv");
  eval::emit_report(report, dir.reports());
}

// Improvement percentages and overfitting diagnosis from the logged curves.
inline void cmd_report(const RunConfig& c, const RunDir& dir, std::ostream& out) {
  (void)c;
  const auto curves = detail::read_valcurves(dir.logs() / "valcurve.csv");
  if (curves.empty()) throw IoError("no validation curves in " + (dir.logs() / "valcurve.csv").string());
  Json summary;
  summary["final_val"] = Json::object();
  summary["overfitting"] = Json::object();
  for (const auto& [id, curve] : curves) {
    summary["final_val"][id] = curve.back().second;
    if (curve.size() >= 3) {
      const auto o = eval::overfit_report(curve);
      summary["overfitting"][id] = {{"min_step", o.min_step},
                                    {"min_loss", o.min_loss},
                                    {"overfitting", o.overfitting},
                                    {"rise_fraction", o.rise_fraction}};
    }
  }
  summary["improvement_pct"] = Json::object();
  for (const auto& [id, curve] : curves) {
    if (id.rfind("mixed_r", 0) != 0) continue;
    const auto rid = "random" + id.substr(5);
    if (!curves.count(rid)) continue;
    const double pct = eval::improvement_pct(curves.at(rid).back().second, curve.back().second);
    summary["improvement_pct"][id.substr(6)] = pct;
    out << "improvement at " << id.substr(6) << ": " << eval::format_pct(pct) << "\n";
  }
  eval::Report r;
  r.val_curves = curves;
  std::error_code ec;
  fs::create_directories(dir.reports(), ec);
  detail::write_valcurves(dir.reports() / "valcurve.csv", curves);
  detail::write_text(dir.reports() / "summary.json", summary.dump(2) + "\n");
  out << "wrote " << (dir.reports() / "summary.json").string() << "\n";
}

// ---------------------------------------------------------------------------

struct Invocation {
  std::string command;
  std::string config_path;
  std::string run_dir = "run";
  std::string preset;
  std::string resume;
  Overrides overrides;
};

inline RunConfig load_config(const Invocation& inv) {
  std::optional<Json> file;
  if (!inv.config_path.empty()) file = detail::read_json_file(inv.config_path);
  std::string preset = inv.preset;
  if (preset.empty() && file && file->contains("preset")) {
    if (!(*file)["preset"].is_string()) throw ConfigError("preset", "must be a string");
    preset = (*file)["preset"].get<std::string>();
  }
  RunConfig c = preset_by_name(preset.empty() ? "desk" : preset);
  if (file) merge_json(c, *file);
  apply_overrides(c, inv.overrides);
  resolve(c);
  return c;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"scotlift: 2D-pretrained scOT lifted to 3D emulation"};
  app.require_subcommand(1);
  Invocation inv;
  std::optional<std::uint64_t> seed;
  std::optional<long> steps;
  std::optional<double> sparsity;
  std::optional<std::string> init;
  std::optional<std::size_t> levels;
  for (const char* name : {"gen-data", "pretrain", "finetune", "evaluate", "report"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", inv.config_path, "JSON run configuration");
    sub->add_option("--run-dir", inv.run_dir, "output directory");
    sub->add_option("--preset", inv.preset, "desk or paper");
    sub->add_option("--seed", seed, "master seed");
    sub->add_option("--steps", steps, "training steps");
    sub->add_option("--sparsity", sparsity, "fraction of columns dropped");
    sub->add_option("--init", init, "random or mixed");
    sub->add_option("--levels", levels, "number of vertical levels D");
    if (std::string(name) == "pretrain" || std::string(name) == "finetune")
      sub->add_option("--resume", inv.resume, "checkpoint to continue from");
    sub->callback([&inv, name] { inv.command = name; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }
  inv.overrides = Overrides{seed, steps, sparsity, init, levels};
  try {
    const RunConfig c = load_config(inv);
    const RunDir dir{inv.run_dir};
    dir.create();
    detail::write_text(dir.config(), to_json(c).dump(2) + "\n");
    if (inv.command == "gen-data") cmd_gen_data(c, dir, out);
    else if (inv.command == "pretrain") cmd_pretrain(c, dir, inv.resume, out);
    else if (inv.command == "finetune") cmd_finetune(c, dir, inv.resume, out);
    else if (inv.command == "evaluate") cmd_evaluate(c, dir, out);
    else cmd_report(c, dir, out);
    return kOk;
  } catch (const ContractError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return kData;
  } catch (const NumericalError& e) {
    err << "error: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kInternal;
  }
}

}  // namespace scotlift::cli
