// dkoia: command-line front end for data generation, training, evaluation,
// closed-loop control and DKOIA/DKO comparison.
//
// Exit codes: 0 ok, 1 unexpected failure, 2 configuration or usage error,
// 3 numerical failure, 4 I/O failure.

#include "dkoia/harness.hpp"

#include "CLI11.hpp"

#include <iostream>

namespace {

using namespace dkoia;
namespace h = dkoia::harness;

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kNumerical = 3, kIo = 4 };

struct Options {
  std::string config;
  std::uint64_t seed = 1;
  bool seed_given = false;
  std::string out;
  std::string variant = "dkoia";
  bool reproducible = false;
  std::string data;
  std::string model;
  Index horizon = 0;
  unsigned jobs = 0;
};

void print_vector(const char* label, const Vector& v) {
  std::cout << "  " << label;
  for (Index i = 0; i < v.size(); ++i) std::cout << ' ' << v[i];
  std::cout << '\n';
}

std::uint64_t seed_of(const Options& o, const h::ExperimentConfig& cfg) {
  return o.seed_given ? o.seed : cfg.seeds.front();
}

int run_generate(const Options& o) {
  const auto cfg = h::load_config(o.config);
  const auto seed = seed_of(o, cfg);
  const h::fs::path out = o.out.empty() ? cfg.output_dir / ("data_seed" + std::to_string(seed)) : h::fs::path(o.out);
  const auto s = h::cmd_generate(cfg, seed, out);
  std::cout << "wrote " << out.string() << " (" << s.dataset.samples() << " samples, seed " << seed << ")\n";
  for (SplitId id : kAllSplits) std::cout << "  " << split_name(id) << ": " << s.dataset.split(id).size() << '\n';
  print_vector("state min: ", s.state_min);
  print_vector("state max: ", s.state_max);
  print_vector("state mean:", s.state_mean);
  return kOk;
}

int run_train(const Options& o) {
  const auto cfg = h::load_config(o.config);
  const auto seed = seed_of(o, cfg);
  const Variant v = parse_variant(o.variant);
  const h::fs::path data = o.data.empty() ? cfg.output_dir / ("data_seed" + std::to_string(seed)) : h::fs::path(o.data);
  const h::fs::path out = o.out.empty()
                              ? cfg.output_dir / (std::string("model_") + variant_name(v) + "_seed" + std::to_string(seed) + ".json")
                              : h::fs::path(o.out);
  const auto s = h::cmd_train(cfg, v, data, seed, out, [](const EpochRecord& r) {
    if (r.epoch % 10 == 0 || r.epoch == 1) {
      std::cout << "epoch " << r.epoch << " train " << r.train_loss << " validation " << r.validation_loss << '\n';
    }
  });
  std::cout << "wrote " << out.string() << " (best epoch " << s.result.best_epoch << ")\n"
            << "  train " << s.errors.train << "  validation " << s.errors.validation << "  test " << s.errors.test
            << '\n';
  return kOk;
}

int run_evaluate(const Options& o) {
  if (o.model.empty() || o.data.empty()) throw UsageError("evaluate needs --model and --data");
  Index horizon = o.horizon;
  if (horizon == 0) horizon = o.config.empty() ? 20 : h::load_config(o.config).training(parse_variant(o.variant)).horizon;
  const auto r = h::cmd_evaluate(o.model, o.data, horizon, o.out);
  std::cout << std::setprecision(10) << "H = " << horizon << "\n  train " << r.train << "\n  validation "
            << r.validation << "\n  test " << r.test << '\n';
  return kOk;
}

int run_control(const Options& o) {
  if (o.model.empty()) throw UsageError("control needs --model");
  const auto cfg = h::load_config(o.config);
  const auto seed = seed_of(o, cfg);
  const h::fs::path out = o.out.empty() ? cfg.output_dir : h::fs::path(o.out);
  const auto c = h::cmd_control(cfg, o.model, seed, out);
  std::cout << std::setprecision(10) << "closed loop, " << c.log.states.size() << " steps, seed " << seed << '\n'
            << "  overall error " << c.metrics.overall << "\n  static error " << c.metrics.static_error
            << "\n  input violations " << c.metrics.input_violations << '\n';
  return kOk;
}

int run_compare(const Options& o) {
  auto cfg = h::load_config(o.config);
  if (o.seed_given) cfg.seeds = {o.seed};
  const h::fs::path out = o.out.empty() ? cfg.output_dir / "compare" : h::fs::path(o.out);
  unsigned jobs = o.jobs ? o.jobs : std::max(1u, std::thread::hardware_concurrency());
  if (o.reproducible) jobs = 1;
  const auto result = h::cmd_compare(cfg, out, jobs);
  const auto s = h::summarize(result.rows);
  std::cout << std::setprecision(6) << "seeds " << s.seeds << "\n  test error   dkoia " << s.dkoia_mean_test
            << "  dko " << s.dko_mean_test << "  dkoia better " << s.dkoia_better_test << "/" << s.seeds
            << "\n  static error dkoia " << s.dkoia_mean_static << "  dko " << s.dko_mean_static
            << "  dkoia better " << s.dkoia_better_static << "/" << s.seeds << "\nwrote " << out.string() << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep Koopman identification and iterative MPC"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub, bool needs_config) {
    auto* c = sub->add_option("-c,--config", o.config, "experiment config (JSON)");
    if (needs_config) c->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "seed (default: first seed in the config)")
        ->each([&](const std::string&) { o.seed_given = true; });
    sub->add_option("-o,--out", o.out, "output path");
    sub->add_option("--variant", o.variant, "model variant")->check(CLI::IsMember({"dkoia", "dko"}));
    sub->add_flag("--reproducible", o.reproducible, "single worker, deterministic output");
  };

  auto* gen = app.add_subcommand("generate", "simulate the plant and write a dataset");
  common(gen, true);
  auto* tr = app.add_subcommand("train", "train a model on a dataset");
  common(tr, true);
  tr->add_option("--data", o.data, "dataset directory");
  auto* ev = app.add_subcommand("evaluate", "prediction error of a model per split");
  common(ev, false);
  ev->add_option("--model", o.model, "model file")->required();
  ev->add_option("--data", o.data, "dataset directory")->required();
  ev->add_option("--horizon", o.horizon, "prediction horizon H");
  auto* ctl = app.add_subcommand("control", "closed-loop run of a trained model");
  common(ctl, true);
  ctl->add_option("--model", o.model, "model file")->required();
  auto* cmp = app.add_subcommand("compare", "paired DKOIA/DKO seed sweep");
  common(cmp, true);
  cmp->add_option("--jobs", o.jobs, "parallel seeds (default: hardware threads)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*gen) return run_generate(o);
    if (*tr) return run_train(o);
    if (*ev) return run_evaluate(o);
    if (*ctl) return run_control(o);
    if (*cmp) return run_compare(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const ShapeError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kConfig;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kNumerical;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kFailure;
}
