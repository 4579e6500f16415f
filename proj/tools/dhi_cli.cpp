// dhi: dataset generation, training, evaluation, profiling and gradient checks.
//
// Exit codes: 0 ok, 1 usage, 2 data, 3 numerical.
// Configuration precedence: command-line flags > --config file > defaults.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>

#include "dhi/error.hpp"
#include "dhi/gradcheck.hpp"
#include "dhi/parallel.hpp"
#include "dhi/profiler.hpp"
#include "dhi/train.hpp"

namespace fs = std::filesystem;
using namespace dhi;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

std::size_t to_size(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long n = std::stoll(v, &pos);
    if (pos == v.size() && n >= 0) return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
  }
  throw InvalidArgument("config key " + key + ": expected a non-negative integer, got '" + v + "'");
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw InvalidArgument("config key " + key + ": expected a number, got '" + v + "'");
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw InvalidArgument("config key " + key + ": expected true/false, got '" + v + "'");
}

// Applies training keys and throws on anything left over.
void apply_train_keys(TrainOptions& t, EvalOptions& e, const std::map<std::string, std::string>& kv) {
  for (const auto& [k, v] : kv) {
    if (k == "epochs") t.epochs = to_size(k, v);
    else if (k == "batch_size") t.batch_size = to_size(k, v);
    else if (k == "lr") t.lr = to_double(k, v);
    else if (k == "seed") t.seed = to_size(k, v);
    else if (k == "limit") t.limit = to_size(k, v);
    else if (k == "fit_anchors") t.fit_anchors = to_bool(k, v);
    else if (k == "augment") t.augment = to_bool(k, v);
    else if (k == "lambda_coord") t.loss.coord = to_double(k, v);
    else if (k == "lambda_noobj") t.loss.noobj = to_double(k, v);
    else if (k == "iou") e.iou_threshold = to_double(k, v);
    else if (k == "nms") e.nms_threshold = to_double(k, v);
    else if (k == "min_confidence") e.min_confidence = to_double(k, v);
    else throw InvalidArgument("unknown config key '" + k + "'");
  }
}

struct Settings {
  ModelConfig model;
  TrainOptions train;
  EvalOptions eval;
};

Settings load_settings(const std::string& config_path) {
  Settings s;
  if (config_path.empty()) return s;
  if (!fs::exists(config_path)) throw DataError("config file not found: " + config_path);
  apply_train_keys(s.train, s.eval, apply_model_keys(s.model, read_key_values(config_path)));
  return s;
}

fs::path sidecar(const fs::path& weights, const std::string& suffix) {
  return weights.string() + suffix;
}

void ensure_parent(const fs::path& p) {
  const auto parent = p.parent_path();
  if (parent.empty()) return;
  std::error_code ec;
  fs::create_directories(parent, ec);
  if (ec) throw DataError("cannot create " + parent.string() + ": " + ec.message());
}

AnchorSet anchors_for(const ModelConfig& cfg) { return default_anchors(cfg.anchors); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Depth-aware hyper-involution RGB-D detector"};
  app.require_subcommand(1);
  std::size_t threads = 0;
  app.add_option("--threads", threads, "worker threads (default: DHI_THREADS or hardware)");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "render a synthetic RGB-D dataset");
  DatasetOptions gen_opts;
  std::size_t gen_tests = 0;
  std::string gen_out;
  gen->add_option("--count", gen_opts.count, "number of samples")->required();
  gen->add_option("--classes", gen_opts.classes, "object classes")->capture_default_str();
  gen->add_option("--seed", gen_opts.seed, "generator seed")->capture_default_str();
  gen->add_option("--image-size", gen_opts.image_size, "square image size in pixels")->capture_default_str();
  auto* gen_tests_opt = gen->add_option("--test-count", gen_tests, "test split size (default count / 5)");
  gen->add_option("--max-objects", gen_opts.max_objects, "objects per scene, at most")->capture_default_str();
  gen->add_option("--out", gen_out, "output directory")->required();

  // train
  auto* train = app.add_subcommand("train", "train the detector from scratch");
  std::string train_data, train_out, train_config, train_weighting, train_generator;
  std::size_t train_epochs = 0, train_kernel = 0, train_batch = 0, train_input = 0, train_limit = 0;
  double train_lr = 0.0, train_gamma = 0.0;
  std::uint64_t train_seed = 0;
  bool no_augment = false;
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--out", train_out, "weights file; .cfg and .loss.csv are written next to it")->required();
  train->add_option("--config", train_config, "key=value configuration file");
  auto* o_epochs = train->add_option("--epochs", train_epochs, "epochs (default 200)");
  auto* o_lr = train->add_option("--lr", train_lr, "Adam learning rate (default 0.0005)");
  auto* o_gamma = train->add_option("--gamma", train_gamma, "depth weighting gamma (default 9.5)");
  auto* o_weighting = train->add_option("--weighting", train_weighting, "imq | gaussian | triangular | wendland");
  auto* o_kernel = train->add_option("--kernel-size", train_kernel, "hyper-involution kernel size (default 3)");
  auto* o_seed = train->add_option("--seed", train_seed, "training seed (default 0)");
  auto* o_batch = train->add_option("--batch-size", train_batch, "mini-batch size (default 8)");
  auto* o_input = train->add_option("--input-size", train_input, "network input size (default 416)");
  auto* o_limit = train->add_option("--limit", train_limit, "use only the first N training samples");
  auto* o_generator = train->add_option("--generator", train_generator, "coordinate | literal");
  train->add_flag("--no-augment", no_augment, "disable flip/transpose augmentation");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate trained weights");
  std::string eval_weights, eval_data, eval_config, eval_out, eval_split = "test";
  double eval_iou = 0.5;
  eval->add_option("--weights", eval_weights, "weights file")->required();
  eval->add_option("--data", eval_data, "dataset directory")->required();
  eval->add_option("--config", eval_config, "model configuration (default: <weights>.cfg)");
  auto* o_iou = eval->add_option("--iou", eval_iou, "IoU threshold for a match")->capture_default_str();
  eval->add_option("--split", eval_split, "train | test")->capture_default_str();
  eval->add_option("--out", eval_out, "directory for the AP table and PR curves");

  // profile
  auto* profile = app.add_subcommand("profile", "parameter and FLOP accounting");
  std::string profile_config, profile_out;
  profile->add_option("--config", profile_config, "model configuration file");
  profile->add_option("--out", profile_out, "directory for CSV output");

  // gradcheck
  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  GradCheckOptions grad_opts;
  grad->add_option("--seed", grad_opts.base_seed, "base seed")->capture_default_str();
  grad->add_option("--seeds", grad_opts.seeds, "seeds per op")->capture_default_str();
  grad->add_flag("--inject-fault", grad_opts.inject_fault, "add a case with a deliberately wrong backward");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (threads > 0) set_thread_count(threads);

    if (*gen) {
      if (*gen_tests_opt) gen_opts.test_count = gen_tests;
      const auto m = generate_dataset(gen_out, gen_opts);
      std::printf("wrote %zu train / %zu test samples to %s\n", m.train.size(), m.test.size(), gen_out.c_str());
      return kOk;
    }

    if (*train) {
      Settings s = load_settings(train_config);
      if (*o_epochs) s.train.epochs = train_epochs;
      if (*o_lr) s.train.lr = train_lr;
      if (*o_gamma) s.model.weighting.gamma = train_gamma;
      if (*o_weighting) s.model.weighting.kind = parse_weighting_kind(train_weighting);
      if (*o_kernel) s.model.kernel_size = train_kernel;
      if (*o_seed) s.train.seed = train_seed;
      if (*o_batch) s.train.batch_size = train_batch;
      if (*o_input) s.model.input_size = train_input;
      if (*o_limit) s.train.limit = train_limit;
      if (*o_generator) s.model.generator_mode = parse_generator_mode(train_generator);
      if (no_augment) s.train.augment = false;
      s.model.validate();
      s.model.weighting.validate();

      const auto manifest = read_manifest(train_data);
      s.model.classes = manifest.classes;
      const auto samples = load_split(manifest, "train", s.model.input_size, s.train.limit);
      Detector model(s.model, anchors_for(s.model));
      std::printf("training on %zu samples, %zu trainable parameters\n", samples.size(),
                  model.params().trainable_count());
      const auto history = train_detector(model, samples, s.train, [](const EpochStats& e) {
        std::printf("epoch %4zu  loss %.6f  (cls %.4f  loc %.4f  conf %.4f)  %.1fs\n", e.epoch, e.loss.total,
                    e.loss.classification, e.loss.localization, e.loss.confidence, e.seconds);
        std::fflush(stdout);
      });
      const fs::path out = train_out;
      ensure_parent(out);
      model.save(out);
      auto kv = model_key_values(model.config());
      write_key_values(sidecar(out, ".cfg"), kv);
      write_loss_csv(sidecar(out, ".loss.csv"), history);
      std::printf("wrote %s\n", out.string().c_str());
      return kOk;
    }

    if (*eval) {
      if (*o_iou && !(eval_iou > 0.0 && eval_iou < 1.0)) {
        std::fprintf(stderr, "error: --iou must lie in (0, 1)\n");
        return kUsage;
      }
      const std::string cfg_path = eval_config.empty() ? sidecar(eval_weights, ".cfg").string() : eval_config;
      Settings s = load_settings(cfg_path);
      s.eval.iou_threshold = eval_iou;
      Detector model(s.model, anchors_for(s.model));
      model.load(eval_weights);
      const auto manifest = read_manifest(eval_data);
      const auto samples = load_split(manifest, eval_split, s.model.input_size);
      const auto result = evaluate_model(model, samples, s.eval);
      std::fputs(format_ap_table(result.report).c_str(), stdout);
      if (!eval_out.empty()) {
        fs::create_directories(eval_out);
        write_ap_table_csv(fs::path(eval_out) / "ap.csv", result.report);
        for (std::size_t c = 0; c < result.report.class_results.size(); ++c) {
          write_pr_curve_csv(fs::path(eval_out) / ("pr_class" + std::to_string(c) + ".csv"),
                             result.report.class_results[c]);
        }
      }
      if (!result.report.map) {
        std::fprintf(stderr, "error: split '%s' has no ground truth; mAP is undefined\n", eval_split.c_str());
        return kData;
      }
      return kOk;
    }

    if (*profile) {
      Settings s = load_settings(profile_config);
      s.model.validate();
      Detector model(s.model, anchors_for(s.model));
      const auto table = parameter_comparison({OperatorKind::Convolution, OperatorKind::Involution,
                                               OperatorKind::HyperInvolution, OperatorKind::DepthAwareHyperInvolution},
                                              {1, 3, 5, 7, 9});
      std::fputs(format_comparison(table).c_str(), stdout);
      const auto p = profile_model(model);
      std::fputs(format_profile(p).c_str(), stdout);
      std::printf("GFLOPs at %zux%zu: %.3f (published reference %.2f, delta %+.3f)\n", s.model.input_size,
                  s.model.input_size, p.gflops(), kReferenceGflops, p.gflops() - kReferenceGflops);
      if (!profile_out.empty()) {
        fs::create_directories(profile_out);
        write_comparison_csv(fs::path(profile_out) / "param_comparison.csv", table);
        write_profile_csv(fs::path(profile_out) / "model_profile.csv", p);
      }
      return kOk;
    }

    if (*grad) {
      const auto results = run_gradient_suite(grad_opts);
      std::size_t failed = 0;
      for (const auto& r : results) {
        std::printf("%-30s seed %-20llu rel %.3e  %zu checked  %s\n", r.op.c_str(),
                    static_cast<unsigned long long>(r.seed), r.rel_error, r.checked, r.passed ? "ok" : "FAIL");
        failed += !r.passed;
      }
      std::printf("%zu / %zu checks passed\n", results.size() - failed, results.size());
      return failed == 0 ? kOk : kNumerical;
    }
  } catch (const InvalidArgument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const DataError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kData;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kNumerical;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kData;
  }
  return kUsage;
}
