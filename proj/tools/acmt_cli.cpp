// acmt: dataset generation, training, simulation, evaluation, ablation, gradient checks
// and mesh conversion behind one subcommand-style binary.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "acmt/config.hpp"
#include "acmt/gradsuite.hpp"
#include "acmt/mesh_io.hpp"
#include "acmt/synthdata.hpp"
#include "acmt/trainer.hpp"

namespace fs = std::filesystem;
using namespace acmt;

namespace {

int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::usage: return 2;
    case ErrorCategory::config: return 3;
    case ErrorCategory::io: return 4;
    case ErrorCategory::shape: return 5;
    case ErrorCategory::precondition: return 6;
    case ErrorCategory::numeric: return 7;
    case ErrorCategory::mismatch: return 8;
  }
  return 1;
}

template <typename T>
void take_flag(const std::optional<T>& flag, T& target) {
  if (flag) target = *flag;
}

// Flags shared by the subcommands that read a run config.
struct Common {
  std::optional<std::string> config;
  std::optional<std::string> data;
  std::optional<std::size_t> jobs;

  config::RunConfig load() const {
    config::RunConfig c = config ? config::load_run_config(*config) : config::RunConfig{};
    if (data) c.data_dir = *data;
    take_flag(jobs, c.jobs);
    require(c.jobs >= 1, ErrorCategory::usage, "--jobs must be at least 1");
    return c;
  }
};

struct TrainFlags {
  std::optional<std::size_t> fold, epochs, batch, points;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr, alpha, beta;
  std::optional<std::string> preset, variant;

  void add(CLI::App* app, bool with_variant_seed) {
    app->add_option("--fold", fold, "Held-out fold; training uses all other folds");
    app->add_option("--epochs", epochs, "Training epochs");
    app->add_option("--batch", batch, "Cases per optimizer step");
    app->add_option("--points", points, "Points per sampled surface fed to the model");
    app->add_option("--lr", lr, "Initial learning rate (decays x0.1 at 60% of the epochs)");
    app->add_option("--alpha", alpha, "Density loss weight");
    app->add_option("--beta", beta, "Local-point-transform loss weight");
    app->add_option("--preset", preset, "Model size: toy or full")->check(CLI::IsMember({"toy", "full"}));
    if (with_variant_seed) {
      app->add_option("--seed", seed, "Initialization and shuffling seed");
      app->add_option("--variant", variant, "acmt, no_corr or closest")->check(CLI::IsMember({"acmt", "no_corr", "closest"}));
    }
  }

  void override(train::TrainConfig& t) const {
    take_flag(fold, t.fold);
    take_flag(epochs, t.epochs);
    take_flag(batch, t.batch);
    take_flag(points, t.n_points);
    take_flag(seed, t.seed);
    take_flag(lr, t.lr);
    take_flag(alpha, t.weights.alpha);
    take_flag(beta, t.weights.beta);
    take_flag(preset, t.preset);
    if (variant) t.variant = net::parse_variant(*variant);
    t.validate();
  }
};

void require_dataset(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json"))
    throw Error(ErrorCategory::io, dir.string() + ": no manifest.json (run gen-data first)");
}

void prepare_out_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCategory::io, dir.string() + ": cannot create output directory: " + ec.message());
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void print_report(const train::MetricsReport& r) {
  std::cout << "deviation error (mm, directional pred->gt, area-weighted; mean +- population std over "
            << r.cases.size() << " cases)\n";
  for (std::size_t k = 0; k < synth::kRegionCount; ++k)
    std::cout << "  " << synth::region_name(k) << "  " << fmt("%.4f", r.region[k].mean) << " +- "
              << fmt("%.4f", r.region[k].std) << "\n";
  std::cout << "  entire   " << fmt("%.4f", r.entire.mean) << " +- " << fmt("%.4f", r.entire.std) << "\n";
  std::cout << "simulation wall-clock " << fmt("%.3f", r.seconds.mean) << " s per case\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ACMT-Net: attentive bone-to-skin correspondence for post-operative facial prediction"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic bone/skin dataset with fold assignment");
  Common gen_common;
  std::optional<std::string> gen_out;
  std::optional<std::size_t> gen_cases, gen_folds, gen_segments, gen_samples;
  std::optional<std::uint64_t> gen_seed;
  std::optional<double> gen_h;
  gen->add_option("--config", gen_common.config, "JSON run config (flags override it)");
  gen->add_option("--out", gen_out, "Dataset directory (default: data.dir from config, else ./data)");
  gen->add_option("--cases", gen_cases, "Number of cases (default 40)");
  gen->add_option("--folds", gen_folds, "Cross-validation folds (default 5)");
  gen->add_option("--seed", gen_seed, "Master seed; case seeds and folds derive from it");
  gen->add_option("--segments", gen_segments, "Bone segments per case, 2-4 (default 3)");
  gen->add_option("--kernel-h", gen_h, "Gaussian kernel bandwidth of the ground-truth transfer, mm (default 15)");
  gen->add_option("--samples", gen_samples, "Surface samples per set and case (default 4096)");
  gen->add_option("--jobs", gen_common.jobs, "Worker threads");

  // train
  auto* tr = app.add_subcommand("train", "Train one model on all folds but --fold");
  Common tr_common;
  TrainFlags tr_flags;
  std::optional<std::string> tr_out;
  bool tr_quiet = false;
  tr->add_option("--config", tr_common.config, "JSON run config (flags override it)");
  tr->add_option("--data", tr_common.data, "Dataset directory");
  tr->add_option("--out", tr_out, "Run directory for checkpoint.ckpt, loss.csv, run.json");
  tr_flags.add(tr, true);
  tr->add_option("--jobs", tr_common.jobs, "Worker threads for loading cases");
  tr->add_flag("--quiet", tr_quiet, "Do not print per-epoch losses");

  // simulate
  auto* sim = app.add_subcommand("simulate", "Predict the post-operative skin mesh of one case");
  std::string sim_ckpt, sim_case, sim_out;
  std::optional<std::string> sim_movement;
  sim->add_option("--checkpoint", sim_ckpt, "Trained checkpoint")->required();
  sim->add_option("--case", sim_case, "Case directory")->required();
  sim->add_option("--out", sim_out, "Output mesh (.ply or .obj)")->required();
  sim->add_option("--movement", sim_movement, "Also write sampled points and predicted movement as CSV");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Surface deviation error of a checkpoint on a fold, or of one mesh");
  Common ev_common;
  std::optional<std::string> ev_ckpt, ev_pred, ev_case, ev_out;
  std::optional<std::size_t> ev_fold;
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint to simulate and score on the test fold");
  ev->add_option("--config", ev_common.config, "JSON run config (for data.dir and jobs)");
  ev->add_option("--data", ev_common.data, "Dataset directory");
  ev->add_option("--fold", ev_fold, "Test fold (default: the fold held out during training)");
  ev->add_option("--pred", ev_pred, "Score this predicted mesh instead of running a checkpoint");
  ev->add_option("--case", ev_case, "Case directory holding the ground truth for --pred");
  ev->add_option("--out", ev_out, "Output directory (metrics.csv, timing.csv, per-case error PLYs)");
  ev->add_option("--jobs", ev_common.jobs, "Worker threads");

  // ablate
  auto* ab = app.add_subcommand("ablate", "Train and score ACMT, closest-point and no-correspondence variants");
  Common ab_common;
  TrainFlags ab_flags;
  std::optional<std::string> ab_out;
  std::optional<std::vector<std::uint64_t>> ab_seeds;
  ab->add_option("--config", ab_common.config, "JSON run config (flags override it)");
  ab->add_option("--data", ab_common.data, "Dataset directory");
  ab->add_option("--out", ab_out, "Output directory for table.csv, detail.csv, run.json");
  ab->add_option("--seeds", ab_seeds, "Training seeds (default 1 2 3)");
  ab_flags.add(ab, false);
  ab->add_option("--jobs", ab_common.jobs, "Concurrent training runs");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every primitive and of model + loss");
  std::size_t gc_seeds = 20, gc_points = 256;
  std::uint64_t gc_seed = 1;
  gc->add_option("--seeds", gc_seeds, "Random instances per primitive")->capture_default_str();
  gc->add_option("--points", gc_points, "Toy-preset point count for the end-to-end check")->capture_default_str();
  gc->add_option("--seed", gc_seed, "Seed of the end-to-end check")->capture_default_str();

  // convert
  auto* cv = app.add_subcommand("convert", "Convert a mesh between OBJ and binary PLY");
  std::string cv_in, cv_out;
  cv->add_option("--in", cv_in, "Input mesh (.obj or .ply)")->required();
  cv->add_option("--out", cv_out, "Output mesh (.obj or .ply)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error[usage]: " << e.what() << "\n";
    return exit_code(ErrorCategory::usage);
  }

  try {
    if (*gen) {
      auto c = gen_common.load();
      if (gen_out) c.data_dir = *gen_out;
      take_flag(gen_cases, c.cases);
      take_flag(gen_folds, c.folds);
      take_flag(gen_seed, c.gen.seed);
      take_flag(gen_segments, c.gen.segments);
      take_flag(gen_h, c.gen.kernel_h);
      take_flag(gen_samples, c.gen.samples);
      c.gen.validate();
      require(c.cases >= c.folds && c.folds >= 1, ErrorCategory::usage, "need cases >= folds >= 1");
      prepare_out_dir(c.data_dir);
      const auto t0 = std::chrono::steady_clock::now();
      const auto m = synth::build_dataset(c.data_dir, c.cases, c.folds, c.gen, c.jobs);
      std::cout << "wrote " << m.cases.size() << " cases in " << m.folds.size() << " folds to " << c.data_dir.string()
                << " (" << fmt("%.1f", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count())
                << " s)\n";
    } else if (*tr) {
      auto c = tr_common.load();
      tr_flags.override(c.train);
      if (tr_out) c.run_dir = *tr_out;
      require_dataset(c.data_dir);
      prepare_out_dir(c.run_dir);
      const std::size_t epochs = c.train.epochs;
      auto log = [&](const train::EpochLoss& e) {
        if (!tr_quiet)
          std::cout << "epoch " << e.epoch + 1 << "/" << epochs << "  lr " << e.lr << "  loss " << fmt("%.6f", e.total)
                    << "  shape " << fmt("%.6f", e.shape) << "  density " << fmt("%.6f", e.density) << "  lpt "
                    << fmt("%.6f", e.lpt) << std::endl;
      };
      const auto t0 = std::chrono::steady_clock::now();
      train::train(c.train, c.data_dir, c.run_dir, log, c.jobs);
      std::cout << "checkpoint written to " << (c.run_dir / "checkpoint.ckpt").string() << " ("
                << fmt("%.1f", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()) << " s)\n";
    } else if (*sim) {
      auto m = train::load_model(sim_ckpt);
      const auto c = synth::load_case(sim_case);
      const auto s = train::simulate(m.model, m.params, c);
      io::write_mesh(sim_out, s.mesh);
      if (sim_movement) {
        const auto p = train::prepare_case(c, m.model.n_facial);
        io::write_points_csv(*sim_movement, p.facial_physical, &s.movement);
      }
      std::cout << "wrote " << sim_out << " (" << fmt("%.3f", s.seconds) << " s)\n";
    } else if (*ev) {
      if (ev_pred) {
        require(ev_case.has_value() && !ev_ckpt, ErrorCategory::usage, "--pred needs --case and excludes --checkpoint");
        const auto c = synth::load_case(*ev_case);
        const auto pred = io::read_mesh(*ev_pred);
        auto m = train::evaluate(pred, c.gt_skin_mesh(), c.region_labels);
        m.id = c.id;
        const auto r = train::MetricsReport::aggregate({m});
        if (ev_out) {
          prepare_out_dir(*ev_out);
          io::write_text_file(fs::path(*ev_out) / "metrics.csv", train::metrics_csv(r));
          io::write_ply(fs::path(*ev_out) / (c.id + "_error.ply"), pred, train::error_colors(m.vertex_error, 3.0));
        }
        print_report(r);
      } else {
        require(ev_ckpt.has_value(), ErrorCategory::usage, "evaluate needs --checkpoint or --pred/--case");
        auto c = ev_common.load();
        require_dataset(c.data_dir);
        auto m = train::load_model(*ev_ckpt);
        std::size_t fold = 0;
        const auto header = nlohmann::json::parse(diff::load_checkpoint(*ev_ckpt).header);
        if (header.contains("train")) fold = header["train"].value("fold", std::size_t{0});
        take_flag(ev_fold, fold);
        const auto ids = synth::load_manifest(c.data_dir).test_cases(fold);
        const fs::path out = ev_out ? fs::path(*ev_out) : fs::path(*ev_ckpt).parent_path() / "eval";
        prepare_out_dir(out);
        const auto r = train::evaluate_cases(m.model, m.params, c.data_dir, ids, c.jobs, out);
        io::write_text_file(out / "metrics.csv", train::metrics_csv(r));
        io::write_text_file(out / "timing.csv", train::timing_csv(r));
        nlohmann::json run{{"command", "evaluate"},     {"checkpoint", *ev_ckpt}, {"fold", fold},
                           {"dataset", c.data_dir.string()}, {"manifest_sha1", train::manifest_hash(c.data_dir)},
                           {"cases", ids}};
        io::write_text_file(out / "run.json", run.dump(2) + "\n");
        print_report(r);
        std::cout << "metrics written to " << (out / "metrics.csv").string() << "\n";
      }
    } else if (*ab) {
      auto c = ab_common.load();
      ab_flags.override(c.train);
      if (ab_out) c.ablation_dir = *ab_out;
      if (ab_seeds) c.ablation_seeds = *ab_seeds;
      require_dataset(c.data_dir);
      prepare_out_dir(c.ablation_dir);
      const auto r = train::run_ablation_suite(c.data_dir, c.train, c.ablation_seeds, c.ablation_dir, c.jobs,
                                               [](const std::string& s) { std::cout << s << std::endl; });
      std::cout << "entire-surface deviation (mm, mean over seeds):\n";
      for (auto v : train::kAllVariants)
        std::cout << "  " << net::variant_name(v) << "  " << fmt("%.4f", r.entire(v)) << "\n";
      std::cout << "table written to " << (c.ablation_dir / "table.csv").string() << "\n";
    } else if (*gc) {
      require(gc_seeds >= 1, ErrorCategory::usage, "--seeds must be at least 1");
      bool ok = true;
      for (const auto& p : gradsuite::check_primitives(gc_seeds)) {
        std::cout << (p.pass ? "PASS " : "FAIL ") << p.name << "  max rel err " << fmt("%.3e", p.max_rel_error) << " over "
                  << p.seeds << " seeds\n";
        ok = ok && p.pass;
      }
      const auto e = gradsuite::check_end_to_end(net::Variant::acmt, gc_points, gc_seed);
      std::cout << (e.pass ? "PASS " : "FAIL ") << "end-to-end acmt toy/" << gc_points << " + hybrid loss  max block rel err "
                << fmt("%.3e", e.max_rel_error) << " over " << e.blocks.size() << " parameter blocks\n";
      ok = ok && e.pass;
      if (!ok) throw Error(ErrorCategory::numeric, "gradient check failed");
    } else if (*cv) {
      io::write_mesh(cv_out, io::read_mesh(cv_in));
      std::cout << "wrote " << cv_out << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error[" << category_name(e.category()) << "]: " << e.what() << "\n";
    return exit_code(e.category());
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
