#pragma once

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "wrpn/analyzer.hpp"
#include "wrpn/dataset.hpp"
#include "wrpn/engine.hpp"
#include "wrpn/model.hpp"
#include "wrpn/serialize.hpp"
#include "wrpn/trainer.hpp"
#include "wrpn/util.hpp"

// Command-line entry point. Subcommands: train, eval, quantize, analyze
// {cost, footprint, sensitivity}, widen, grid, synth. Machine output goes to
// stdout or --out; diagnostics go to stderr. Exit codes: 0 success, 1 domain
// error, 2 usage error.

namespace wrpn {

namespace cli_detail {

inline void emit(const std::string& text, const std::string& out_path, std::ostream& out) {
  if (out_path.empty())
    out << text;
  else
    write_file(out_path, text);
}

inline ExecMode mode_from_string(const std::string& s) {
  if (s == "float") return ExecMode::Float;
  if (s == "fake_quant" || s == "fake") return ExecMode::FakeQuant;
  if (s == "integer") return ExecMode::IntegerPath;
  throw config_error("unknown mode '" + s + "' (float, fake_quant, integer)");
}

inline Dataset dataset_from_args(const std::string& data, const std::string& labels) {
  if (!labels.empty()) return ingest_idx(data, labels);
  const std::filesystem::path dir(data);
  if (std::filesystem::is_directory(dir))
    return ingest_idx((dir / "images.idx3-ubyte").string(),
                      (dir / "labels.idx1-ubyte").string());
  throw parse_error("--data must be a directory holding images.idx3-ubyte and "
                    "labels.idx1-ubyte, or pass --labels with an images file");
}

}  // namespace cli_detail

inline int cli_dispatch(const std::vector<std::string>& args, std::ostream& out,
                        std::ostream& err) {
  CLI::App app{"wide reduced-precision network toolkit"};
  app.require_subcommand(1);

  // train
  std::string train_config_path;
  auto* train_cmd = app.add_subcommand("train", "train a network from a JSON config");
  train_cmd->add_option("--config", train_config_path, "training config (JSON)")->required();

  // eval
  std::string eval_checkpoint, eval_data, eval_labels, eval_mode = "fake_quant", eval_out;
  auto* eval_cmd = app.add_subcommand("eval", "top-1 accuracy of a checkpoint on an IDX set");
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--data", eval_data,
                       "dataset directory (images.idx3-ubyte + labels.idx1-ubyte) or images file")
      ->required();
  eval_cmd->add_option("--labels", eval_labels, "labels file when --data is an images file");
  eval_cmd->add_option("--mode", eval_mode, "float | fake_quant | integer");
  eval_cmd->add_option("--out", eval_out, "write the result here instead of stdout");

  // quantize
  std::string q_checkpoint, q_out;
  int q_kw = 8, q_ka = 8;
  auto* quant_cmd = app.add_subcommand("quantize", "emit an integer-code model from a checkpoint");
  quant_cmd->add_option("--checkpoint", q_checkpoint, "checkpoint file")->required();
  quant_cmd->add_option("--kw", q_kw, "weight bits")->required();
  quant_cmd->add_option("--ka", q_ka, "activation bits")->required();
  quant_cmd->add_option("--out", q_out, "output model file")->required();

  // analyze
  auto* analyze_cmd = app.add_subcommand("analyze", "static cost and footprint reports");
  analyze_cmd->require_subcommand(1);
  std::string a_net, a_format = "csv", a_out, a_phase = "inference";
  double a_widen = 1.0;
  int a_kw = 0, a_ka = 0;
  std::uint64_t a_batch = 1;
  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--net", a_net, "descriptor file or preset name")->required();
    sub->add_option("--widen", a_widen, "widening multiplier");
    sub->add_option("--kw", a_kw, "override weight bits (0 = descriptor)");
    sub->add_option("--ka", a_ka, "override activation bits (0 = descriptor)");
    sub->add_option("--format", a_format, "csv | json");
    sub->add_option("--out", a_out, "write the report here instead of stdout");
  };
  auto* cost_cmd = analyze_cmd->add_subcommand("cost", "per-layer FMAs and bit cost");
  add_common(cost_cmd);
  auto* fp_cmd = analyze_cmd->add_subcommand("footprint", "weight/activation memory bytes");
  add_common(fp_cmd);
  fp_cmd->add_option("--batch", a_batch, "mini-batch size");
  fp_cmd->add_option("--phase", a_phase, "training | inference");
  auto* sens_cmd =
      analyze_cmd->add_subcommand("sensitivity", "cost ratios over first/last-layer conventions");
  add_common(sens_cmd);

  // widen
  std::string w_net, w_out;
  double w_m = 1.0;
  auto* widen_cmd = app.add_subcommand("widen", "scale a descriptor's filter counts");
  widen_cmd->add_option("--net", w_net, "descriptor file or preset name")->required();
  widen_cmd->add_option("--m", w_m, "widening multiplier")->required();
  widen_cmd->add_option("--out", w_out, "output descriptor file")->required();

  // grid
  std::string grid_config_path, grid_out;
  auto* grid_cmd = app.add_subcommand("grid", "train a (k_W, k_A, widening) grid");
  grid_cmd->add_option("--config", grid_config_path, "grid config (JSON)")->required();
  grid_cmd->add_option("--out", grid_out, "override the CSV output path");

  // synth
  std::string s_out;
  std::int64_t s_train = 2000, s_test = 500;
  std::uint64_t s_seed = 1;
  SynthOptions s_opt;
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic 10-class 28x28 IDX set");
  synth_cmd->add_option("--out", s_out, "output directory")->required();
  synth_cmd->add_option("--train", s_train, "training sample count");
  synth_cmd->add_option("--test", s_test, "test sample count");
  synth_cmd->add_option("--seed", s_seed, "generator seed");
  synth_cmd->add_option("--noise", s_opt.noise, "pixel noise sigma");
  synth_cmd->add_option("--ink-min", s_opt.min_intensity, "lowest stroke brightness");
  synth_cmd->add_option("--ink-max", s_opt.max_intensity, "highest stroke brightness");
  synth_cmd->add_option("--distractors", s_opt.distractors, "clutter marks per image");

  std::vector<const char*> argv;
  argv.push_back("wrpn");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n";
    return 2;
  }

  try {
    if (*train_cmd) {
      const TrainConfig config = load_train_config(train_config_path);
      const TrainResult result = train(config);
      out << result.metrics_csv;
      return 0;
    }

    if (*eval_cmd) {
      const Checkpoint ckpt = load_checkpoint(eval_checkpoint);
      const Dataset data = cli_detail::dataset_from_args(eval_data, eval_labels);
      const double acc =
          evaluate(ckpt, data, cli_detail::mode_from_string(eval_mode));
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.6f\n", acc);
      cli_detail::emit(buf, eval_out, out);
      return 0;
    }

    if (*quant_cmd) {
      const Checkpoint ckpt = load_checkpoint(q_checkpoint);
      check_bit_width(q_kw);
      check_bit_width(q_ka);
      QuantizedModel model;
      model.descriptor = override_bits(ckpt.descriptor, {q_kw, q_ka});
      model.weight_bits = q_kw;
      model.activation_bits = q_ka;
      check_integer_accumulator(model.descriptor);
      model.weights.resize(ckpt.weights.size());
      for (std::size_t i = 0; i < ckpt.weights.size(); ++i)
        if (!ckpt.weights[i].empty())
          model.weights[i] =
              to_codes(ckpt.weights[i], model.descriptor.layers[i].weight_spec);
      save_quantized_model(model, q_out);
      err << "wrote " << q_out << "\n";
      return 0;
    }

    if (*analyze_cmd) {
      NetworkDescriptor net = load_descriptor_or_preset(a_net);
      net = widen(net, a_widen);
      if (a_format != "csv" && a_format != "json")
        throw config_error("unknown format '" + a_format + "' (csv, json)");
      std::string text;
      if (*cost_cmd) {
        const CostReport report =
            compute_cost(net, {.weight_bits = a_kw, .activation_bits = a_ka});
        text = a_format == "csv" ? to_csv(report) : to_json(report).dump(2) + "\n";
      } else if (*fp_cmd) {
        Phase phase;
        if (a_phase == "training")
          phase = Phase::Training;
        else if (a_phase == "inference")
          phase = Phase::Inference;
        else
          throw config_error("unknown phase '" + a_phase + "' (training, inference)");
        const FootprintReport report = memory_footprint(
            net, a_batch, phase, {.weight_bits = a_kw, .activation_bits = a_ka});
        text = a_format == "csv" ? to_csv(report) : to_json(report).dump(2) + "\n";
      } else {
        // Sensitivity widens internally so the ratio baseline stays at 1x.
        const auto rows = cost_sensitivity(load_descriptor_or_preset(a_net), a_widen,
                                           a_kw == 0 ? 4 : a_kw, a_ka == 0 ? 4 : a_ka);
        text = a_format == "csv" ? to_csv(rows) : to_json(rows).dump(2) + "\n";
      }
      cli_detail::emit(text, a_out, out);
      return 0;
    }

    if (*widen_cmd) {
      NetworkDescriptor net = load_descriptor_or_preset(w_net);
      save_descriptor(widen(net, w_m), w_out);
      err << "wrote " << w_out << "\n";
      return 0;
    }

    if (*grid_cmd) {
      GridConfig grid = load_grid_config(grid_config_path);
      if (!grid_out.empty()) grid.out = grid_out;
      const std::vector<GridCell> cells = run_grid(grid);
      const std::string csv = grid_to_csv(cells);
      if (grid.out.empty())
        out << csv;
      else
        err << "wrote " << grid.out << "\n";
      return 0;
    }

    if (*synth_cmd) {
      namespace fs = std::filesystem;
      SynthOptions opt = s_opt;
      fs::create_directories(fs::path(s_out) / "train");
      fs::create_directories(fs::path(s_out) / "test");
      opt.count = s_train;
      opt.seed = s_seed;
      const Dataset train_set = synthesize_dataset(opt);
      save_idx(train_set, (fs::path(s_out) / "train" / "images.idx3-ubyte").string(),
               (fs::path(s_out) / "train" / "labels.idx1-ubyte").string());
      opt.count = s_test;
      opt.seed = s_seed + 1;
      const Dataset test_set = synthesize_dataset(opt);
      save_idx(test_set, (fs::path(s_out) / "test" / "images.idx3-ubyte").string(),
               (fs::path(s_out) / "test" / "labels.idx1-ubyte").string());
      err << "wrote " << s_out << "/train and " << s_out << "/test\n";
      return 0;
    }
  } catch (const error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  err << "no subcommand\n";
  return 2;
}

}  // namespace wrpn
