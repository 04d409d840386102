// planrl: command-line front end for demos, supervised heads, RL training,
// evaluation, sweeps and plots.
//
// Exit codes: 0 success, 1 user error (bad arguments, config, files),
// 2 internal error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "planrl/planrl.hpp"

namespace fs = std::filesystem;
using namespace planrl;
using nlohmann::json;

namespace {

constexpr int kUserError = 1;
constexpr int kInternalError = 2;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool out_required = true) {
  cmd->add_option("--config", c.config, "experiment config (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "random seed");
  auto* o = cmd->add_option("--out", c.out, "output path; relative paths resolve under $PLANRL_OUT_ROOT when set");
  if (out_required) o->required();
}

fs::path resolve_out(const std::string& out) {
  fs::path p = out;
  if (p.is_relative())
    if (const char* root = std::getenv("PLANRL_OUT_ROOT"); root && *root) p = fs::path(root) / p;
  return p;
}

void ensure_parent(const fs::path& file) {
  if (file.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(file.parent_path(), ec);
    if (ec) throw Error(ErrorCode::io, "cannot create directory " + file.parent_path().string() + ": " + ec.message());
  }
}

harness::ExperimentConfig load_or_default(const Common& c) {
  harness::ExperimentConfig cfg = c.config.empty() ? harness::config_from_json(json::object()) : harness::load_config(c.config);
  for (const auto& w : cfg.warnings) std::cerr << "warning: " << w << '\n';
  return cfg;
}

env::World world_for(const harness::ExperimentConfig& cfg, const std::optional<std::string>& task) {
  if (!task || *task == env::to_string(cfg.world.task)) return cfg.world;
  return env::default_world(env::parse_task(*task));
}

void print_json(const json& j) { std::cout << j.dump(2) << '\n'; }

json classifier_json(const modes::ClassifierReport& r) {
  return {{"tp", r.tp},           {"fp", r.fp},     {"tn", r.tn},         {"fn", r.fn},
          {"accuracy", r.accuracy}, {"precision", r.precision}, {"recall", r.recall}, {"f1", r.f1}};
}

void write_json(const fs::path& path, const json& j) {
  ensure_parent(path);
  harness::write_text_atomic(path, j.dump(2) + "\n");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid motion-planning and imitation-bootstrapped RL toolkit"};
  app.require_subcommand(1);

  Common c_demos, c_labels, c_sup, c_train, c_eval, c_sweep, c_plot;

  auto* gen_demos = app.add_subcommand("gen-demos", "generate scripted expert demonstrations");
  add_common(gen_demos, c_demos);
  std::optional<std::string> demos_task;
  int demos_n = 10;
  std::string demos_rand = "ObjectPos";
  gen_demos->add_option("--task", demos_task, "ReachLift | PushToGoal | PickAndPlace");
  gen_demos->add_option("--n", demos_n, "number of successful trajectories")->check(CLI::PositiveNumber);
  gen_demos->add_option("--randomization", demos_rand, "None | ObjectPos | ObjectAndGripper");

  auto* gen_labels = app.add_subcommand("gen-labels", "generate the labeled mode/waypoint dataset");
  add_common(gen_labels, c_labels);
  std::optional<std::string> labels_task;
  std::optional<int> labels_n;
  gen_labels->add_option("--task", labels_task, "task name");
  gen_labels->add_option("--samples", labels_n, "number of labeled states")->check(CLI::PositiveNumber);

  auto* train_sup = app.add_subcommand("train-supervised", "train bc, modenet or navnet");
  add_common(train_sup, c_sup);
  std::string sup_kind, sup_dataset, sup_report;
  train_sup->add_option("--kind", sup_kind, "bc | modenet | navnet")->required()->check(CLI::IsMember({"bc", "modenet", "navnet"}));
  train_sup->add_option("--dataset", sup_dataset, "demo file (bc) or label file (modenet, navnet)")->required()->check(CLI::ExistingFile);
  train_sup->add_option("--report", sup_report, "also write the report JSON here");

  auto* train = app.add_subcommand("train", "run one RL training run");
  add_common(train, c_train);
  std::optional<std::string> train_variant;
  train->add_option("--variant", train_variant, "PLANRL | IBRL | RL-MN | RL (overrides config)");

  auto* eval = app.add_subcommand("eval", "evaluate a trained bundle");
  add_common(eval, c_eval, false);
  std::string eval_ckpt, eval_protocol = "ObjectAndGripper";
  int eval_episodes = 100;
  eval->add_option("--checkpoint", eval_ckpt, "bundle.bin from train")->required()->check(CLI::ExistingFile);
  eval->add_option("--protocol", eval_protocol, "ObjectPos | ObjectAndGripper");
  eval->add_option("--episodes", eval_episodes, "episode count")->check(CLI::PositiveNumber);

  auto* sweep = app.add_subcommand("sweep", "train every variant for every seed and aggregate");
  add_common(sweep, c_sweep);
  std::vector<std::uint64_t> sweep_seeds;
  std::optional<int> sweep_jobs;
  sweep->add_option("--seeds", sweep_seeds, "seed list (overrides config)")->delimiter(',');
  sweep->add_option("--jobs", sweep_jobs, "parallel workers")->check(CLI::PositiveNumber);

  auto* plot = app.add_subcommand("plot", "SVG charts from aggregate.csv files");
  add_common(plot, c_plot);
  std::vector<std::string> plot_inputs;
  plot->add_option("csv", plot_inputs, "aggregate CSV files")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kUserError;
  }

  try {
    if (*gen_demos) {
      const auto cfg = load_or_default(c_demos);
      const auto world = world_for(cfg, demos_task);
      const fs::path out = resolve_out(c_demos.out);
      const auto ds = expert::generate_demos(world, demos_n, c_demos.seed.value_or(0),
                                             env::parse_randomization(demos_rand), cfg.demos.expert);
      ensure_parent(out);
      expert::save_demos(out, ds);
      print_json({{"file", out.string()},
                  {"task", std::string(env::to_string(world.task))},
                  {"trajectories", ds.trajectories.size()},
                  {"transitions", ds.transition_count()}});
    } else if (*gen_labels) {
      const auto cfg = load_or_default(c_labels);
      const auto world = world_for(cfg, labels_task);
      auto sc = cfg.supervision;
      if (labels_n) sc.samples = *labels_n;
      const fs::path out = resolve_out(c_labels.out);
      const auto ds = modes::build_supervision_set(world, sc, c_labels.seed.value_or(0));
      ensure_parent(out);
      modes::save_labels(out, ds);
      print_json({{"file", out.string()},
                  {"samples", ds.size()},
                  {"positive_fraction", ds.positive_fraction()},
                  {"d_thresh", ds.d_thresh},
                  {"h_offset", ds.h_offset}});
    } else if (*train_sup) {
      const auto cfg = load_or_default(c_sup);
      const fs::path out = resolve_out(c_sup.out);
      const std::uint64_t seed = c_sup.seed.value_or(0);
      json report;
      ensure_parent(out);
      if (sup_kind == "bc") {
        const auto ds = expert::load_demos(sup_dataset);
        auto bc = cfg.bc;
        bc.seed = seed;
        const auto r = train_bc(ds, bc);
        save_bc(out, r.policy);
        report = {{"kind", "bc"},
                  {"transitions", ds.transition_count()},
                  {"initial_loss", r.initial_loss},
                  {"final_loss", r.epoch_loss.empty() ? r.initial_loss : r.epoch_loss.back()}};
      } else {
        const auto ds = modes::load_labels(sup_dataset);
        const auto world = ds.task == cfg.world.task ? cfg.world : env::default_world(ds.task);
        auto hc = cfg.heads;
        hc.seed = seed;
        if (sup_kind == "modenet") {
          const auto r = modes::train_modenet(ds, hc);
          modes::save_modenet(out, r.model);
          report = classifier_json(r.report.holdout);
          report["kind"] = "modenet";
          report["train_size"] = r.report.train_size;
          report["holdout_size"] = r.report.holdout_size;
          report["final_train_loss"] = r.report.final_train_loss;
        } else {
          const auto r = modes::train_navnet(ds, world, hc);
          modes::save_navnet(out, r.model);
          report = {{"kind", "navnet"},
                    {"mean_waypoint_error", r.report.holdout_mean_error},
                    {"max_waypoint_error", r.report.holdout_max_error},
                    {"mean_error_fraction_of_diagonal", r.report.holdout_mean_error / world.diagonal()},
                    {"train_size", r.report.train_size},
                    {"holdout_size", r.report.holdout_size},
                    {"final_train_loss", r.report.final_train_loss}};
        }
      }
      report["checkpoint"] = out.string();
      if (!sup_report.empty()) write_json(resolve_out(sup_report), report);
      print_json(report);
    } else if (*train) {
      auto cfg = load_or_default(c_train);
      const auto variant = train_variant ? agent::parse_variant(*train_variant) : cfg.agent.variant;
      const std::uint64_t seed = c_train.seed.value_or(cfg.seeds.front());
      const fs::path out = resolve_out(c_train.out);
      const auto r = harness::run_single(cfg, variant, seed, out);
      json evals = json::object();
      for (const auto& e : r.final_eval) evals[e.protocol] = e.success_rate;
      print_json({{"variant", std::string(agent::to_string(variant))},
                  {"seed", seed},
                  {"dir", out.string()},
                  {"final_train_success", r.final_train_success},
                  {"env_steps", r.metrics.env_steps},
                  {"updates", r.metrics.updates},
                  {"planner_failures", r.metrics.planner_failures},
                  {"eval", evals}});
    } else if (*eval) {
      const auto bundle = agent::load_bundle(eval_ckpt);
      const auto protocol = env::parse_randomization(eval_protocol);
      const std::uint64_t seed = c_eval.seed.value_or(0);
      const double rate = agent::evaluate(bundle, protocol, eval_episodes, seed);
      const harness::EvalRow row{std::string(agent::to_string(bundle.config.variant)),
                                 std::string(env::to_string(bundle.world.task)), seed, eval_protocol, eval_episodes, rate};
      if (!c_eval.out.empty()) {
        const fs::path out = resolve_out(c_eval.out);
        ensure_parent(out);
        harness::write_text_atomic(out, harness::csv_header(harness::kEvalKind, harness::kEvalColumns) + harness::eval_line(row));
      }
      print_json({{"variant", row.variant}, {"protocol", row.protocol}, {"episodes", eval_episodes}, {"seed", seed},
                  {"success_rate", rate}});
    } else if (*sweep) {
      auto cfg = load_or_default(c_sweep);
      if (!sweep_seeds.empty()) cfg.seeds = sweep_seeds;
      else if (c_sweep.seed) cfg.seeds = {*c_sweep.seed};
      if (sweep_jobs) cfg.jobs = *sweep_jobs;
      const fs::path out = resolve_out(c_sweep.out);
      fs::create_directories(out);
      const auto r = harness::run_sweep(cfg, out);
      json finals = json::object();
      for (const auto& a : r.aggregate) {
        if (a.protocol != "train") continue;
        finals[a.variant] = {{"step", a.step}, {"success_mean", a.success_mean}, {"success_std", a.success_std}};
      }
      print_json({{"dir", out.string()}, {"runs", r.runs.size()}, {"final_interval", finals}});
    } else if (*plot) {
      std::vector<harness::AggregateRow> rows;
      for (const auto& f : plot_inputs) {
        auto part = harness::load_aggregate(f);
        rows.insert(rows.end(), part.begin(), part.end());
      }
      const auto files = harness::write_plots(rows, resolve_out(c_plot.out));
      json list = json::array();
      for (const auto& f : files) list.push_back(f.string());
      print_json({{"files", list}});
    }
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << '\n';
    return kUserError;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error [io]: " << e.what() << '\n';
    return kUserError;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kInternalError;
  }
  return 0;
}
