// Command-line front door: train / eval / count / diff / gradcheck /
// export-features / probe. Outputs are files (CSV, checkpoints, feature
// dumps); nothing is interactive.

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "regnet/costing.hpp"
#include "regnet/gradsuite.hpp"
#include "regnet/trainer.hpp"

namespace {

using namespace regnet;

struct SpecFlags {
  std::string config;
  std::string family = "resnet";
  std::string cell = "gru";
  int n = 3;
  std::string stage_blocks;
  int classes = 10;
  std::string input;
  std::string regulated;
  std::int64_t se_reduction = 8;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "architecture config file (flags override)");
    app->add_option("--family", family, "resnet|regnet|se-resnet|se-regnet");
    app->add_option("--cell", cell, "vanilla|gru|lstm");
    app->add_option("--n", n, "small-image depth parameter (layers = 6n+2)");
    app->add_option("--stage-blocks", stage_blocks, "bottleneck stage blocks, e.g. 3,4,6,3");
    app->add_option("--classes", classes, "number of classes");
    app->add_option("--input", input, "input geometry CxHxW");
    app->add_option("--regulated-stages", regulated, "per-stage mask, e.g. 1,0,0");
    app->add_option("--se-reduction", se_reduction, "SE reduction ratio");
  }

  ArchSpec resolve(const CLI::App* app) const {
    ArchSpec spec;
    if (!config.empty()) spec = ArchSpec::from_config_file(config);
    std::ostringstream overrides;
    if (config.empty() || app->count("--family")) overrides << "family = " << family << "\n";
    if (config.empty() || app->count("--cell")) overrides << "cell = " << cell << "\n";
    if (app->count("--stage-blocks")) {
      overrides << "stage_blocks = " << stage_blocks << "\n";
    } else if (config.empty() || app->count("--n")) {
      overrides << "n = " << n << "\n";
    }
    if (config.empty() || app->count("--classes")) overrides << "classes = " << classes << "\n";
    if (app->count("--input")) overrides << "input = " << input << "\n";
    if (app->count("--regulated-stages")) overrides << "regulated_stages = " << regulated << "\n";
    if (app->count("--se-reduction")) overrides << "se_reduction = " << se_reduction << "\n";
    if (config.empty()) return ArchSpec::from_config_text(overrides.str());
    // merge: serialize the file spec, then re-parse with overrides appended
    return ArchSpec::from_config_text(spec.to_config() + overrides.str());
  }
};

// Shorthand like "regnet-gru-n3", "resnet-n5", "se-regnet-lstm-50",
// "resnet50"; a path to a config file is also accepted.
ArchSpec spec_from_preset(const std::string& token, int classes_cifar, int classes_inet) {
  if (std::filesystem::exists(token)) return ArchSpec::from_config_file(token);
  std::string rest = token;
  bool se = false;
  if (rest.rfind("se-", 0) == 0) {
    se = true;
    rest = rest.substr(3);
  }
  Family fam;
  if (rest.rfind("regnet", 0) == 0) {
    fam = se ? Family::se_regnet : Family::regnet;
    rest = rest.substr(6);
  } else if (rest.rfind("resnet", 0) == 0) {
    fam = se ? Family::se_resnet : Family::resnet;
    rest = rest.substr(6);
  } else {
    throw InvalidArgument("preset '" + token + "': expected resnet/regnet prefix");
  }
  CellKind cell = CellKind::gru;
  int n = 3;
  bool imagenet = false;
  std::stringstream ss(rest);
  std::string tok;
  while (std::getline(ss, tok, '-')) {
    if (tok.empty()) continue;
    if (tok == "vanilla" || tok == "rnn" || tok == "gru" || tok == "lstm") {
      cell = cell_kind_from_name(tok);
    } else if (tok[0] == 'n') {
      n = std::stoi(tok.substr(1));
    } else if (tok == "50") {
      imagenet = true;
    } else if (tok == "20" || tok == "32" || tok == "56") {
      n = (std::stoi(tok) - 2) / 6;
    } else {
      throw InvalidArgument("preset '" + token + "': unrecognized token '" + tok + "'");
    }
  }
  return imagenet ? ArchSpec::imagenet50(fam, cell, classes_inet)
                  : ArchSpec::cifar(fam, cell, n, classes_cifar);
}

std::string default_data_dir(const std::string& flag_value) {
  if (!flag_value.empty()) return flag_value;
  if (const char* env = std::getenv("REGNET_DATA_DIR")) return env;
  return "data";
}

Dataset load_or_synthesize(const std::string& dir, bool allow_synth, std::ostream& log) {
  if (cifar_files_present(dir, CifarVariant::c10)) {
    log << "# data: binary files from " << dir << "\n";
    return load_cifar(dir, CifarVariant::c10);
  }
  if (!allow_synth) {
    throw IoError("data directory '" + dir +
                  "' lacks the CIFAR-10 binary files (pass --synthetic-fallback to generate a "
                  "stand-in corpus)");
  }
  log << "# data: real corpus absent, generating synthetic stand-in in " << dir << "\n";
  write_synthetic_cifar10(dir, 700, 200, 9001);
  return load_cifar(dir, CifarVariant::c10);
}

int cmd_count(const ArchSpec& spec, const std::string& csv_path) {
  const CostReport rep = count_flops(spec, spec.input);
  if (!csv_path.empty()) {
    std::ofstream f(csv_path);
    if (!f) throw IoError("cannot write " + csv_path);
    rep.to_csv(f);
  }
  std::cout << rep.label << ": params " << rep.total_params() << " ("
            << static_cast<double>(rep.total_params()) / 1e6 << "M), macs " << rep.total_macs()
            << " (" << static_cast<double>(rep.total_macs()) / 1e6 << "M), flops "
            << rep.total_flops() << " (" << static_cast<double>(rep.total_flops()) / 1e6 << "M)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RNN-regulated residual networks: training, probing and cost accounting"};
  app.require_subcommand(1);

  // ---- count ----
  auto* count = app.add_subcommand("count", "parameter/MAC/FLOP accounting for one architecture");
  SpecFlags count_spec;
  count_spec.attach(count);
  std::string count_csv;
  count->add_option("--csv", count_csv, "write the per-layer report here");

  // ---- diff ----
  auto* diff = app.add_subcommand("diff", "cost delta between two architectures");
  std::string diff_a, diff_b, diff_csv;
  int diff_classes = 10;
  bool diff_reconcile = false;
  diff->add_option("--a", diff_a, "preset (e.g. regnet-gru-n3) or config file")->required();
  diff->add_option("--b", diff_b, "preset or config file")->required();
  diff->add_option("--classes", diff_classes, "classes for cifar presets");
  diff->add_option("--csv", diff_csv, "write the per-layer delta here");
  diff->add_flag("--reconciliation", diff_reconcile,
                 "also print the published-reference reconciliation table");

  // ---- gradcheck ----
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  double gc_tol = 1e-4;
  gradcheck->add_option("--tol", gc_tol, "max relative error allowed");

  // ---- train ----
  auto* train_cmd = app.add_subcommand("train", "SGD training (desk-scale defaults)");
  SpecFlags train_spec;
  train_spec.attach(train_cmd);
  train_spec.family = "regnet";
  TrainConfig tc;
  tc.epochs = 20;
  tc.train_subset = 5000;
  std::string tr_data, tr_metrics = "metrics.csv", tr_checkpoint = "model.ckpt";
  std::string tr_decay = "80";
  bool tr_synth = false, tr_no_augment = false, tr_resume = false, tr_quiet = false;
  train_cmd->add_option("--data", tr_data, "data directory (default $REGNET_DATA_DIR or ./data)");
  train_cmd->add_option("--lr", tc.lr, "initial learning rate");
  train_cmd->add_option("--decay-epochs", tr_decay, "comma-separated decay epochs");
  train_cmd->add_option("--decay-factor", tc.decay_factor, "multiplier at each decay epoch");
  train_cmd->add_option("--momentum", tc.momentum, "SGD momentum");
  train_cmd->add_option("--weight-decay", tc.weight_decay, "L2 coefficient");
  train_cmd->add_option("--epochs", tc.epochs, "training epochs");
  train_cmd->add_option("--batch", tc.batch, "batch size");
  train_cmd->add_option("--seed", tc.seed, "seed for init, shuffling and augmentation");
  train_cmd->add_option("--eval-every", tc.eval_every, "test evaluation cadence (epochs)");
  train_cmd->add_option("--train-subset", tc.train_subset, "train on this many images (0 = all)");
  train_cmd->add_option("--test-subset", tc.test_subset, "evaluate on this many images (0 = all)");
  train_cmd->add_flag("--no-augment", tr_no_augment, "disable pad-crop/flip augmentation");
  train_cmd->add_option("--metrics", tr_metrics, "metrics CSV path");
  train_cmd->add_option("--checkpoint", tr_checkpoint, "checkpoint path");
  train_cmd->add_flag("--resume", tr_resume, "resume from --checkpoint");
  train_cmd->add_flag("--synthetic-fallback", tr_synth,
                      "generate a synthetic stand-in corpus when real data is absent");
  train_cmd->add_flag("--quiet", tr_quiet, "suppress per-epoch progress");

  // ---- eval ----
  auto* eval_cmd = app.add_subcommand("eval", "test-set evaluation of a checkpoint");
  std::string ev_ckpt, ev_data;
  std::int64_t ev_subset = 0;
  int ev_batch = 64;
  bool ev_synth = false;
  eval_cmd->add_option("--checkpoint", ev_ckpt)->required();
  eval_cmd->add_option("--data", ev_data);
  eval_cmd->add_option("--batch", ev_batch);
  eval_cmd->add_option("--test-subset", ev_subset);
  eval_cmd->add_flag("--synthetic-fallback", ev_synth);

  // ---- probe ----
  auto* probe_cmd = app.add_subcommand("probe", "per-block probe classification accuracy");
  std::string pr_ckpt, pr_data, pr_blocks = "7,8,9", pr_out;
  std::int64_t pr_subset = 0;
  int pr_batch = 64;
  bool pr_synth = false;
  probe_cmd->add_option("--checkpoint", pr_ckpt)->required();
  probe_cmd->add_option("--data", pr_data);
  probe_cmd->add_option("--blocks", pr_blocks, "comma-separated 1-based block indices");
  probe_cmd->add_option("--out", pr_out, "probe CSV path (default stdout)");
  probe_cmd->add_option("--batch", pr_batch);
  probe_cmd->add_option("--test-subset", pr_subset);
  probe_cmd->add_flag("--synthetic-fallback", pr_synth);

  // ---- export-features ----
  auto* exp_cmd = app.add_subcommand("export-features", "dump per-block I/H/O feature maps");
  std::string ex_ckpt, ex_data, ex_blocks = "7,8,9", ex_prefix = "features";
  int ex_batch = 8;
  bool ex_synth = false;
  exp_cmd->add_option("--checkpoint", ex_ckpt)->required();
  exp_cmd->add_option("--data", ex_data);
  exp_cmd->add_option("--blocks", ex_blocks);
  exp_cmd->add_option("--out", ex_prefix, "output prefix (<prefix>.bin + <prefix>.manifest)");
  exp_cmd->add_option("--batch", ex_batch, "number of test images to push through");
  exp_cmd->add_flag("--synthetic-fallback", ex_synth);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // prints the one-line reason (or help text)
    return code == 0 ? 0 : 1;
  }

  auto parse_int_list = [](const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      if (!tok.empty()) out.push_back(std::stoi(tok));
    }
    return out;
  };

  try {
    if (count->parsed()) return cmd_count(count_spec.resolve(count), count_csv);

    if (diff->parsed()) {
      const ArchSpec a = spec_from_preset(diff_a, diff_classes, 1000);
      const ArchSpec b = spec_from_preset(diff_b, diff_classes, 1000);
      const CostReport ra = count_flops(a, a.input);
      const CostReport rb = count_flops(b, b.input);
      const CostReport delta = diff_reports(ra, rb);
      if (!diff_csv.empty()) {
        std::ofstream f(diff_csv);
        if (!f) throw IoError("cannot write " + diff_csv);
        delta.to_csv(f);
      }
      std::cout << delta.label << ": params " << (delta.total_params() >= 0 ? "+" : "")
                << delta.total_params() << " (" << static_cast<double>(delta.total_params()) / 1e6
                << "M), macs " << delta.total_macs() << ", flops " << delta.total_flops() << "\n";
      if ((a.family == Family::regnet && b.family == Family::resnet) && !a.bottleneck() &&
          a.n == 3 && a.cell == CellKind::gru) {
        std::cout << "# reference: the published figure for this pairing is +44K parameters / "
                     "+15M FLOPs; see the reconciliation table for the residual analysis\n";
      }
      if (diff_reconcile) write_reconciliation(std::cout);
      return 0;
    }

    if (gradcheck->parsed()) {
      bool ok = true;
      for (const auto& c : standard_grad_suite()) {
        const auto rep = c.run();
        const bool pass = rep.max_rel_err < gc_tol;
        ok = ok && pass;
        std::cout << (pass ? "PASS " : "FAIL ") << c.name << " max_rel_err " << rep.max_rel_err;
        if (!pass) std::cout << " worst " << rep.worst;
        std::cout << "\n";
      }
      return ok ? 0 : 1;
    }

    if (train_cmd->parsed()) {
      tc.augment = !tr_no_augment;
      tc.decay_epochs = parse_int_list(tr_decay);
      ArchSpec spec = train_spec.resolve(train_cmd);
      const std::string dir = default_data_dir(tr_data);
      Dataset ds = load_or_synthesize(dir, tr_synth, std::cout);
      const Normalization norm = load_or_measure_normalization(dir + "/normalization.csv", ds.train);
      auto net = build<float>(spec);
      int start_epoch = 0;
      if (tr_resume) {
        const auto meta = load_checkpoint(tr_checkpoint, *net);
        start_epoch = meta.epoch;
        std::cout << "# resumed from epoch " << start_epoch << "\n";
      } else {
        net->init(tc.seed);
      }
      const TrainResult res = train(*net, ds.train, ds.test, tc, norm, tr_checkpoint, start_epoch,
                                    tr_quiet ? nullptr : &std::cout);
      std::ofstream mf(tr_metrics);
      if (!mf) throw IoError("cannot write " + tr_metrics);
      write_metrics_csv(mf, res.log);
      if (res.aborted) {
        std::cerr << "training aborted: " << res.abort_reason << "\n";
        return 2;
      }
      if (!res.log.empty() && res.log.back().test_err >= 0) {
        std::cout << "final test error " << res.log.back().test_err << "\n";
      }
      return 0;
    }

    auto restore = [&](const std::string& ckpt) {
      const auto meta = read_checkpoint_meta(ckpt);
      auto net = build<float>(ArchSpec::from_config_text(meta.config));
      load_checkpoint(ckpt, *net);
      return net;
    };

    if (eval_cmd->parsed()) {
      auto net = restore(ev_ckpt);
      const std::string dir = default_data_dir(ev_data);
      Dataset ds = load_or_synthesize(dir, ev_synth, std::cout);
      const Normalization norm = load_or_measure_normalization(dir + "/normalization.csv", ds.train);
      const double acc = evaluate(*net, ds.test, norm, ev_batch, ev_subset);
      std::cout << "test_accuracy " << acc << "\ntest_error " << 1.0 - acc << "\n";
      return 0;
    }

    if (probe_cmd->parsed()) {
      auto net = restore(pr_ckpt);
      const std::string dir = default_data_dir(pr_data);
      Dataset ds = load_or_synthesize(dir, pr_synth, std::cout);
      const Normalization norm = load_or_measure_normalization(dir + "/normalization.csv", ds.train);
      const auto probes =
          probe_blocks(*net, ds.test, norm, parse_int_list(pr_blocks), pr_batch, pr_subset);
      if (pr_out.empty()) {
        write_probe_csv(std::cout, probes);
      } else {
        std::ofstream f(pr_out);
        if (!f) throw IoError("cannot write " + pr_out);
        write_probe_csv(f, probes);
      }
      return 0;
    }

    if (exp_cmd->parsed()) {
      auto net = restore(ex_ckpt);
      const std::string dir = default_data_dir(ex_data);
      Dataset ds = load_or_synthesize(dir, ex_synth, std::cout);
      const Normalization norm = load_or_measure_normalization(dir + "/normalization.csv", ds.train);
      BatchPlan plan;
      plan.batch = ex_batch;
      plan.shuffle = false;
      plan.pad_crop = false;
      plan.hflip = false;
      plan.norm = norm;
      Batcher batcher(&ds.test, plan);
      Batch b = batcher.assemble(batcher.plan_epoch(0), 0);
      export_features(*net, b.images, parse_int_list(ex_blocks), ex_prefix);
      std::cout << "wrote " << ex_prefix << ".bin and " << ex_prefix << ".manifest\n";
      return 0;
    }
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
