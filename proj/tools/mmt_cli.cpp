// Command-line driver: data generation, source pre-training, peer
// mean-teacher adaptation, evaluation, ablations and lambda sweeps.
//
// Every command writes resolved_config.json into --out so that a run can be
// replayed from that file alone.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mmt/config.hpp"
#include "mmt/error.hpp"
#include "mmt/log.hpp"
#include "mmt/trainer.hpp"

namespace fs = std::filesystem;
using namespace mmt;

namespace {

struct Options {
  std::string config_path;
  std::string out_dir = "mmt_out";
  std::string data_dir;    // defaults to out_dir
  std::string checkpoint;  // command-specific default
  std::vector<std::string> overrides;
  std::vector<std::string> rows;
  std::string sweep_param = "lambda_tri";
  std::vector<double> sweep_values = {0.0, 0.3, 0.5, 0.8, 1.0};
};

RunConfig resolve_config(const Options& o) {
  RunConfig c = o.config_path.empty() ? RunConfig{} : load_config(o.config_path);
  for (const auto& kv : o.overrides) apply_override(c, kv);
  c.validate();
  return c;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw ArtifactError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

fs::path prepare_out(const Options& o, const RunConfig& config) {
  const fs::path out(o.out_dir);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw ArtifactError("cannot create output directory " + out.string());
  write_json(out / "resolved_config.json", to_json(config));
  return out;
}

fs::path data_dir(const Options& o) { return fs::path(o.data_dir.empty() ? o.out_dir : o.data_dir); }

ExperimentData read_data(const Options& o) {
  const fs::path d = data_dir(o);
  ExperimentData data;
  data.source_train = read_samples((d / "source_train.jsonl").string());
  data.source_val = read_samples((d / "source_val.jsonl").string());
  data.target_train = read_samples((d / "target_train.jsonl").string());
  data.target_test = read_samples((d / "target_test.jsonl").string());
  return data;
}

std::string checkpoint_or(const Options& o, const fs::path& fallback) {
  return o.checkpoint.empty() ? fallback.string() : o.checkpoint;
}

nlohmann::json experiment_json(const ExperimentResult& r) {
  nlohmann::json j = metrics_to_json(r.target);
  j["inference_model"] = to_string(r.chosen);
  return j;
}

void cmd_gen_data(const Options& o) {
  const RunConfig c = resolve_config(o);
  const fs::path out = prepare_out(o, c);
  const ExperimentData data = make_experiment_data(c.data, c.seeds.data);
  write_samples((out / "source_train.jsonl").string(), data.source_train);
  write_samples((out / "source_val.jsonl").string(), data.source_val);
  write_samples((out / "target_train.jsonl").string(), data.target_train);
  write_samples((out / "target_test.jsonl").string(), data.target_test);
}

void cmd_pretrain(const Options& o) {
  const RunConfig c = resolve_config(o);
  const fs::path out = prepare_out(o, c);
  const ExperimentData data = read_data(o);
  const NetworkPair pair = pretrain_source(data.source_train, c);
  save_checkpoint((out / "pretrained.json").string(), pair, c);
  write_json(out / "metrics.json", experiment_json(evaluate_pair(pair, data, c)));
}

void cmd_adapt(const Options& o) {
  const RunConfig c = resolve_config(o);
  const fs::path out = prepare_out(o, c);
  const NetworkPair pretrained = load_checkpoint(checkpoint_or(o, out / "pretrained.json"));
  const ExperimentData data = read_data(o);
  NetworkPair adapted;
  const ExperimentResult r = run_adaptation(pretrained, data, c, &adapted);
  save_checkpoint((out / "adapted.json").string(), adapted, c);
  write_steps_csv((out / "steps.csv").string(), r.log);
  write_epochs_csv((out / "epochs.csv").string(), r.log);
  // Final pseudo labels from the adapted average model.
  std::vector<LabeledSample> target = data.target_train;
  for (auto& s : target) s.identity = -1;
  const RelabelOptions relabel{c.cluster.normalize, c.cluster.use_raw_network, c.cluster.max_iter};
  const PseudoLabeling labels = relabel_epoch(adapted, target, c.num_pseudo_classes,
                                              mix_seed(c.seeds.cluster, c.epochs_adapt), relabel);
  write_pseudo_labels_csv((out / "pseudo_labels.csv").string(), labels);
  nlohmann::json j = experiment_json(r);
  j["final_mean_kl"] = r.final_mean_kl;
  write_json(out / "metrics.json", j);
}

void cmd_evaluate(const Options& o) {
  const RunConfig c = resolve_config(o);
  const fs::path out = prepare_out(o, c);
  const NetworkPair pair = load_checkpoint(checkpoint_or(o, out / "adapted.json"));
  const ExperimentData data = read_data(o);
  write_json(out / "metrics.json", experiment_json(evaluate_pair(pair, data, c)));
}

nlohmann::json rows_json(const std::vector<AblationRow>& rows) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json e = {{"row", r.name}};
    if (r.metrics) {
      e["metrics"] = metrics_to_json(*r.metrics);
      e["final_mean_kl"] = r.final_mean_kl;
    } else {
      e["error"] = r.error;
    }
    j.push_back(e);
  }
  return j;
}

void cmd_ablate(const Options& o) {
  const RunConfig c = resolve_config(o);
  const fs::path out = prepare_out(o, c);
  const auto rows = run_ablation_suite(c, o.rows);
  write_ablation_csv((out / "ablation.csv").string(), rows);
  write_json(out / "metrics.json", rows_json(rows));
}

void cmd_sweep(const Options& o) {
  const RunConfig c = resolve_config(o);
  if (o.sweep_param != "lambda_tri" && o.sweep_param != "lambda_id") {
    throw ConfigError("sweep parameter must be lambda_tri or lambda_id");
  }
  const fs::path out = prepare_out(o, c);
  const ExperimentData data = make_experiment_data(c.data, c.seeds.data);
  const NetworkPair pretrained = pretrain_source(data.source_train, c);
  std::ofstream csv(out / "sweep.csv");
  if (!csv) throw ArtifactError("cannot write sweep.csv");
  csv << o.sweep_param << ",mAP,top1,top5,top10\n";
  nlohmann::json j = nlohmann::json::array();
  for (double v : o.sweep_values) {
    RunConfig run = c;
    (o.sweep_param == "lambda_tri" ? run.weights.lambda_tri : run.weights.lambda_id) = v;
    const ExperimentResult r = run_adaptation(pretrained, data, run);
    csv << format_double(v) << ',' << format_double(r.target.mAP) << ','
        << format_double(r.target.cmc1) << ',' << format_double(r.target.cmc5) << ','
        << format_double(r.target.cmc10) << '\n';
    nlohmann::json e = experiment_json(r);
    e[o.sweep_param] = v;
    j.push_back(e);
  }
  write_json(out / "metrics.json", j);
}

}  // namespace

int main(int argc, char** argv) {
  init_logging_from_env();
  CLI::App app{"Peer mean-teacher domain adaptation on synthetic re-identification data"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", o.config_path, "JSON config with flat dotted keys")
        ->check(CLI::ExistingFile);
    sub->add_option("-o,--out", o.out_dir, "Output directory");
    sub->add_option("overrides", o.overrides, "key=value overrides");
  };
  auto* gen = app.add_subcommand("gen-data", "Generate source and target datasets");
  auto* pre = app.add_subcommand("pretrain", "Pre-train both networks on the source domain");
  auto* ada = app.add_subcommand("adapt", "Adapt the pre-trained pair to the target domain");
  auto* eva = app.add_subcommand("evaluate", "Evaluate a checkpoint on target test data");
  auto* abl = app.add_subcommand("ablate", "Run the ablation table");
  auto* swp = app.add_subcommand("sweep-lambda", "Vary one loss weight, others fixed");
  for (auto* sub : {gen, pre, ada, eva, abl, swp}) common(sub);
  for (auto* sub : {pre, ada, eva}) sub->add_option("--data", o.data_dir, "Dataset directory");
  for (auto* sub : {ada, eva}) sub->add_option("--checkpoint", o.checkpoint, "Checkpoint JSON");
  abl->add_option("--rows", o.rows, "Subset of ablation rows");
  swp->add_option("--param", o.sweep_param, "lambda_tri or lambda_id");
  swp->add_option("--values", o.sweep_values, "Values to sweep");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*gen) cmd_gen_data(o);
    else if (*pre) cmd_pretrain(o);
    else if (*ada) cmd_adapt(o);
    else if (*eva) cmd_evaluate(o);
    else if (*abl) cmd_ablate(o);
    else if (*swp) cmd_sweep(o);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const ArtifactError& e) {
    std::fprintf(stderr, "missing or invalid artifact: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
