// ncood: data generation, training, evaluation and analysis front end.

#include <cstdlib>
#include <iostream>

#include "CLI11.hpp"
#include "ncood/commands.hpp"
#include "ncood/error.hpp"

namespace {

enum Exit { kOk = 0, kCheckFailed = 1, kConfig = 2, kData = 3, kNumeric = 4 };

std::filesystem::path env_out_dir() {
  const char* v = std::getenv("NCOOD_OUT_DIR");
  return v && *v ? std::filesystem::path(v) : std::filesystem::path();
}

}  // namespace

int main(int argc, char** argv) {
  using namespace ncood;
  CLI::App app{"Outlier-exposure fine-tuning with neural-collapse and orthogonality losses on synthetic data"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "ncood 1.0");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "write id_train/id_test/ood_aux/ood_test CSV files");
  std::string gen_config;
  std::string gen_out;
  std::uint64_t gen_seed = 0;
  BenchmarkSpec spec;
  std::string aux_mode = std::string(to_string(spec.aux_mode)), test_mode = std::string(to_string(spec.test_mode));
  gen->add_option("--config", gen_config, "run config; its generator keys and data_seed become the defaults");
  gen->add_option("--classes", spec.num_classes, "number of ID classes C");
  gen->add_option("--dim", spec.dim, "input dimension d (must exceed C)");
  gen->add_option("--n-per-class", spec.n_train_per_class, "ID training samples per class");
  gen->add_option("--n-test-per-class", spec.n_test_per_class, "ID test samples per class");
  gen->add_option("--mean-scale", spec.mean_scale, "norm of every class mean");
  gen->add_option("--sigma", spec.sigma, "ID per-coordinate standard deviation");
  gen->add_option("--aux-mode", aux_mode, "auxiliary outlier mode")
      ->check(CLI::IsMember({"shifted-gaussian", "uniform-shell", "mixture"}));
  gen->add_option("--test-mode", test_mode, "test outlier mode")
      ->check(CLI::IsMember({"shifted-gaussian", "uniform-shell", "mixture"}));
  gen->add_option("--aux-count,-m", spec.aux_count, "auxiliary outlier count");
  gen->add_option("--test-count", spec.test_count, "test outlier count");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--out-dir", gen_out, "output directory (default: $NCOOD_OUT_DIR, else config out_dir, else .)");

  // train
  auto* train = app.add_subcommand("train", "warm-up plus two-stage fine-tuning");
  std::string train_config, resume, train_out;
  std::size_t stop_after = 0;
  train->add_option("--config", train_config, "run config file")->required();
  train->add_option("--resume", resume, "continue from this checkpoint");
  auto* stop_opt = train->add_option("--stop-after", stop_after, "stop after this many fine-tuning epochs");
  train->add_option("--out-dir", train_out, "override out_dir");

  // eval
  auto* eval = app.add_subcommand("eval", "FPR95 / AUROC per score kind and OOD set");
  std::string ck_path, id_test, out_path, score_kind = "all";
  std::vector<std::string> ood_tests;
  eval->add_option("--checkpoint", ck_path)->required();
  eval->add_option("--id-test", id_test)->required();
  eval->add_option("--ood-test", ood_tests, "one or more OOD CSV files")->required();
  eval->add_option("--score-kind", score_kind)->check(CLI::IsMember({"msp", "combined", "all"}));
  eval->add_option("--out", out_path, "CSV output (default stdout)");

  // separation
  auto* sep = app.add_subcommand("separation", "ID/OOD separation degree (euclidean, cosine, reconstruction)");
  std::string sep_ood;
  sep->add_option("--checkpoint", ck_path)->required();
  sep->add_option("--id-test", id_test)->required();
  sep->add_option("--ood-test", sep_ood)->required();
  sep->add_option("--out", out_path, "CSV output (default stdout)");

  // project
  auto* proj = app.add_subcommand("project", "feature coordinates on (w_1, w_2[, OOD principal direction])");
  std::size_t dims = 2;
  proj->add_option("--checkpoint", ck_path)->required();
  proj->add_option("--id-test", id_test)->required();
  proj->add_option("--ood-test", sep_ood)->required();
  proj->add_option("--dims", dims)->check(CLI::IsMember({2, 3}));
  proj->add_option("--out", out_path, "CSV output (default stdout)");

  // gradcheck
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every op and loss");
  GradCheckSuiteOptions gopt;
  grad->add_option("--seed", gopt.seed);
  grad->add_option("--trials", gopt.trials, "random draws per check");
  grad->add_option("--inject-sign-flip", gopt.inject_sign_flip, "negate one check's analytic gradient")
      ->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*gen) {
      std::filesystem::path out = ".";
      std::uint64_t seed = gen_seed;
      if (!gen_config.empty()) {
        auto cfg = load_run_config(gen_config);
        BenchmarkSpec from_cfg = cfg.data;
        // Flags given explicitly win over the config file.
        auto take = [&](const char* flag, auto& dst, const auto& src) {
          if (gen->count(flag) == 0) dst = src;
        };
        take("--classes", spec.num_classes, from_cfg.num_classes);
        take("--dim", spec.dim, from_cfg.dim);
        take("--n-per-class", spec.n_train_per_class, from_cfg.n_train_per_class);
        take("--n-test-per-class", spec.n_test_per_class, from_cfg.n_test_per_class);
        take("--mean-scale", spec.mean_scale, from_cfg.mean_scale);
        take("--sigma", spec.sigma, from_cfg.sigma);
        take("--aux-count", spec.aux_count, from_cfg.aux_count);
        take("--test-count", spec.test_count, from_cfg.test_count);
        take("--seed", seed, cfg.data_seed);
        spec.aux_params = from_cfg.aux_params;
        spec.test_params = from_cfg.test_params;
        if (gen->count("--aux-mode") == 0) aux_mode = std::string(to_string(from_cfg.aux_mode));
        if (gen->count("--test-mode") == 0) test_mode = std::string(to_string(from_cfg.test_mode));
        out = cfg.out_dir;
      }
      if (auto env = env_out_dir(); !env.empty()) out = env;
      if (!gen_out.empty()) out = gen_out;
      spec.aux_mode = parse_outlier_mode(aux_mode);
      spec.test_mode = parse_outlier_mode(test_mode);
      cmd_gen_data(spec, seed, out, std::cout);
    } else if (*train) {
      auto cfg = load_run_config(train_config);
      if (auto env = env_out_dir(); !env.empty()) cfg.out_dir = env;
      if (!train_out.empty()) cfg.out_dir = train_out;
      TrainOptions opt;
      if (!resume.empty()) opt.resume = resume;
      if (stop_opt->count() > 0) opt.stop_after = stop_after;
      cmd_train(cfg, opt, std::cout);
    } else if (*eval) {
      std::vector<std::filesystem::path> oods(ood_tests.begin(), ood_tests.end());
      write_text(out_path, detection_csv(cmd_eval(ck_path, id_test, oods, score_kind)), std::cout);
    } else if (*sep) {
      write_text(out_path, separation_csv(cmd_separation(ck_path, id_test, sep_ood)), std::cout);
    } else if (*proj) {
      const auto rows = cmd_project(ck_path, id_test, sep_ood, dims, std::cerr);
      write_text(out_path, projection_csv(dims, rows), std::cout);
    } else if (*grad) {
      return cmd_gradcheck(gopt, std::cout) ? kOk : kCheckFailed;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kData;
  } catch (const FormatError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const DimensionError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kCheckFailed;
  }
  return kOk;
}
