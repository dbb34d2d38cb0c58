// trajformer command-line tool.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data or
// checkpoint error, 3 numeric failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "trajformer/checkpoint.hpp"
#include "trajformer/config.hpp"
#include "trajformer/data.hpp"
#include "trajformer/error.hpp"
#include "trajformer/eval.hpp"
#include "trajformer/training.hpp"

using namespace trajformer;
using nlohmann::json;

namespace {

struct Settings {
  ModelConfig model;
  TrainConfig train;
  SyntheticConfig synthetic;
};

Settings load_settings(const std::string& path) {
  Settings s;
  if (path.empty()) return s;
  const json j = read_json_file(path);
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "model") {
      s.model = value.get<ModelConfig>();
    } else if (key == "train") {
      s.train = value.get<TrainConfig>();
    } else if (key == "synthetic") {
      s.synthetic = value.get<SyntheticConfig>();
    } else {
      throw ConfigError("config: unknown section '" + key + "'");
    }
  }
  return s;
}

template <typename T>
void override_if(const std::optional<T>& flag, T& field) {
  if (flag) field = *flag;
}

std::string norm_path_for(const std::string& ckpt) { return ckpt + ".norm.json"; }

TrajectorySource data_source(const std::string& data, const SyntheticConfig& synthetic) {
  if (!data.empty()) return stream_jsonl(data);
  auto gen = std::make_shared<SyntheticGenerator>(synthetic);
  return [gen] { return gen->next(); };
}

int run(int argc, char** argv) {
  CLI::App app{"Trajectory transformer: synthetic data, training and evaluation"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic JSONL corpus");
  std::string synth_config, synth_out;
  std::optional<std::size_t> synth_n, synth_points, synth_waypoints;
  std::optional<std::uint64_t> synth_seed;
  std::optional<double> synth_noise;
  synth->add_option("--config", synth_config, "JSON config with a 'synthetic' section");
  synth->add_option("--n-traj", synth_n, "Number of trajectories");
  synth->add_option("--points", synth_points, "Points per trajectory");
  synth->add_option("--waypoints", synth_waypoints, "Waypoints per trajectory");
  synth->add_option("--noise", synth_noise, "Position noise sigma in degrees");
  synth->add_option("--seed", synth_seed, "Generator seed");
  synth->add_option("--out", synth_out, "Output JSONL path")->required();

  // fit-norm
  auto* fit = app.add_subcommand("fit-norm", "Compute normalization parameters of a corpus");
  std::string fit_data, fit_out;
  fit->add_option("--data", fit_data, "Input JSONL")->required();
  fit->add_option("--out", fit_out, "Output JSON path (stdout when omitted)");

  // train
  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint");
  std::string train_config, train_data, train_norm, train_out = "model.ckpt", train_metrics,
                                                    train_resume;
  std::optional<std::size_t> tr_epochs, tr_batch, tr_max_steps, tr_seq_len;
  std::optional<double> tr_lr;
  std::optional<std::uint64_t> tr_seed;
  std::optional<std::string> tr_objective;
  train->add_option("--config", train_config, "JSON config (model, train, synthetic)");
  train->add_option("--data", train_data, "Training JSONL (synthetic corpus when omitted)");
  train->add_option("--norm", train_norm, "Normalization JSON (fitted on the train split if omitted)");
  train->add_option("--out", train_out, "Checkpoint path");
  train->add_option("--metrics", train_metrics, "Per-epoch metrics CSV path");
  train->add_option("--resume", train_resume, "Resume from this checkpoint");
  train->add_option("--epochs", tr_epochs);
  train->add_option("--batch-size", tr_batch);
  train->add_option("--seq-len", tr_seq_len);
  train->add_option("--max-steps", tr_max_steps);
  train->add_option("--lr", tr_lr);
  train->add_option("--seed", tr_seed);
  train->add_option("--objective", tr_objective, "next_step | infill | alternating");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a corpus");
  std::string ev_ckpt, ev_data, ev_norm, ev_mode = "next_step", ev_format = "json", ev_config;
  std::size_t ev_horizon = 5, ev_batch = 16;
  std::uint64_t ev_seed = 0;
  double ev_ratio = kDefaultMaskRatio;
  eval->add_option("--config", ev_config, "JSON config (synthetic section used without --data)");
  eval->add_option("--checkpoint", ev_ckpt, "Checkpoint path")->required();
  eval->add_option("--data", ev_data, "Evaluation JSONL (synthetic corpus when omitted)");
  eval->add_option("--norm", ev_norm, "Dataset normalization JSON; must match the checkpoint");
  eval->add_option("--mode", ev_mode, "next_step | infill | rollout");
  eval->add_option("--horizon", ev_horizon, "Rollout horizon");
  eval->add_option("--mask-ratio", ev_ratio, "Infill mask ratio");
  eval->add_option("--seed", ev_seed, "Infill mask seed");
  eval->add_option("--batch-size", ev_batch);
  eval->add_option("--format", ev_format, "json | csv")
      ->check(CLI::IsMember({"json", "csv"}));

  // rollout
  auto* roll = app.add_subcommand("rollout", "Predict continuations of trajectory prefixes autoregressively");
  std::string ro_ckpt, ro_data, ro_out;
  std::size_t ro_prefix = 8, ro_horizon = 5;
  roll->add_option("--checkpoint", ro_ckpt, "Checkpoint path")->required();
  roll->add_option("--data", ro_data, "Input JSONL")->required();
  roll->add_option("--prefix-len", ro_prefix, "Points of each trajectory used as the prefix");
  roll->add_option("--horizon", ro_horizon, "Points to predict");
  roll->add_option("--out", ro_out, "Output JSONL (stdout when omitted)");

  // pretext-check
  auto* pre = app.add_subcommand("pretext-check", "Autoencoder reconstruction check on features");
  std::string pre_config, pre_data;
  PretextOptions pre_opts;
  pre->add_option("--config", pre_config, "JSON config (synthetic section used without --data)");
  pre->add_option("--data", pre_data, "Input JSONL (synthetic corpus when omitted)");
  pre->add_option("--steps", pre_opts.steps);
  pre->add_option("--lr", pre_opts.lr);
  pre->add_option("--latent", pre_opts.d_latent);
  pre->add_option("--seed", pre_opts.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (*synth) {
    Settings s = load_settings(synth_config);
    override_if(synth_n, s.synthetic.n_traj);
    override_if(synth_points, s.synthetic.points_per_traj);
    override_if(synth_waypoints, s.synthetic.n_waypoints);
    override_if(synth_noise, s.synthetic.noise_sigma);
    override_if(synth_seed, s.synthetic.seed);
    auto gen = std::make_shared<SyntheticGenerator>(s.synthetic);
    write_jsonl(synth_out, [gen] { return gen->next(); });
    std::cerr << "wrote " << s.synthetic.n_traj << " trajectories to " << synth_out << '\n';
    return 0;
  }

  if (*fit) {
    JsonlReader reader(fit_data);
    CenterAccumulator acc;
    while (auto t = reader.next()) acc.add(*t);
    if (acc.count() == 0) throw DataError("'" + fit_data + "' contains no valid trajectories");
    const json j = acc.finish();
    if (fit_out.empty()) {
      std::cout << j.dump(2) << '\n';
    } else {
      write_json_file(fit_out, j);
    }
    if (reader.malformed() > 0) std::cerr << reader.malformed() << " malformed lines skipped\n";
    return 0;
  }

  if (*train) {
    Settings s = load_settings(train_config);
    override_if(tr_epochs, s.train.epochs);
    override_if(tr_batch, s.train.batch_size);
    override_if(tr_seq_len, s.train.seq_len);
    override_if(tr_max_steps, s.train.max_steps);
    override_if(tr_lr, s.train.lr);
    override_if(tr_seed, s.train.seed);
    if (tr_objective) s.train.objective = parse_objective(*tr_objective);

    const TrainConfig tc = s.train;
    const SyntheticConfig sc = s.synthetic;
    const std::string data = train_data;
    auto split_source = [tc, sc, data](bool validation) {
      return split_stream(data_source(data, sc), validation, tc.val_fraction, tc.seed);
    };

    std::optional<Trainer> trainer;
    if (!train_resume.empty()) {
      const Checkpoint ckpt = load_checkpoint(train_resume, train_config.empty() ? nullptr : &s.model);
      TrainConfig resumed = tc;
      if (train_config.empty() && !tr_epochs && !tr_max_steps) resumed = ckpt.train;
      trainer.emplace(ckpt, resumed);
    } else {
      NormalizationParams norm;
      if (!train_norm.empty()) {
        norm = read_json_file(train_norm).get<NormalizationParams>();
      } else {
        CenterAccumulator acc;
        auto src = split_source(false);
        while (auto t = src()) acc.add(*t);
        if (acc.count() == 0) throw DataError("training split is empty");
        norm = acc.finish();
      }
      trainer.emplace(s.model, tc, norm);
    }

    const bool has_val = tc.val_fraction > 0.0;
    trainer->train([&] { return split_source(false); },
                   has_val ? Trainer::SourceFactory([&] { return split_source(true); }) : nullptr,
                   [](std::uint64_t step, const StepResult& r) {
                     if (step % 50 == 0) {
                       std::cerr << "step " << step << " loss " << r.loss << " ("
                                 << to_string(r.mode) << ")\n";
                     }
                   });

    save_checkpoint(trainer->checkpoint(), train_out);
    write_json_file(norm_path_for(train_out), json(trainer->normalization()));
    const std::string csv = metrics_csv(trainer->history());
    if (!train_metrics.empty()) {
      std::ofstream out(train_metrics);
      if (!out) throw DataError("cannot write '" + train_metrics + "'");
      out << csv;
    } else {
      std::cerr << csv;
    }
    std::cout << json{{"checkpoint", train_out},
                      {"steps", trainer->steps_taken()},
                      {"hash", checkpoint_hash(trainer->checkpoint())}}
                     .dump()
              << '\n';
    return 0;
  }

  if (*eval) {
    const Settings s = load_settings(ev_config);
    const Checkpoint ckpt = load_checkpoint(ev_ckpt);
    const ModelPredictor model(ckpt.model, ckpt.params, ckpt.norm);
    std::optional<NormalizationParams> dataset_norm;
    if (!ev_norm.empty()) dataset_norm = read_json_file(ev_norm).get<NormalizationParams>();
    EvalOptions opts;
    opts.mode = parse_eval_mode(ev_mode);
    opts.horizon = ev_horizon;
    opts.mask_ratio = ev_ratio;
    opts.seed = ev_seed;
    opts.batch_size = ev_batch;
    const MetricsReport report = evaluate(model, data_source(ev_data, s.synthetic), opts,
                                          dataset_norm ? &*dataset_norm : nullptr);
    if (ev_format == "csv") {
      std::cout << to_csv(report);
    } else {
      std::cout << to_json(report).dump() << '\n';
    }
    return 0;
  }

  if (*roll) {
    const Checkpoint ckpt = load_checkpoint(ro_ckpt);
    const ModelPredictor model(ckpt.model, ckpt.params, ckpt.norm);
    std::ofstream file;
    if (!ro_out.empty()) {
      file.open(ro_out);
      if (!file) throw DataError("cannot write '" + ro_out + "'");
    }
    std::ostream& out = ro_out.empty() ? std::cout : file;
    JsonlReader reader(ro_data);
    while (auto t = reader.next()) {
      if (t->points.size() < ro_prefix) continue;
      Trajectory prefix{t->id, {t->points.begin(), t->points.begin() + ro_prefix}};
      Trajectory extended{t->id, rollout(model, prefix, ro_horizon)};
      out << to_jsonl_line(extended) << '\n';
    }
    return 0;
  }

  if (*pre) {
    const Settings s = load_settings(pre_config);
    std::vector<Tensor> seqs;
    std::vector<Trajectory> trajs = collect(data_source(pre_data, s.synthetic));
    const NormalizationParams norm = compute_center(trajs);
    for (const auto& t : trajs) seqs.push_back(featurize(t, norm).features);
    const PretextReport r = pretext_autoencoder_check(seqs, pre_opts);
    std::cout << json{{"rmse_raw", r.rmse_raw},
                      {"rmse_with_pe", r.rmse_with_pe},
                      {"n_train", r.n_train},
                      {"n_test", r.n_test}}
                     .dump()
              << '\n';
    return 0;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
