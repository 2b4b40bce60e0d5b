// grain command-line interface.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "grain/gradient_suite.hpp"
#include "grain/io.hpp"
#include "grain/trainer.hpp"

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string data;
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool needs_data) {
  auto* d = cmd->add_option("--data", c.data, "dataset directory");
  if (needs_data) d->required();
  cmd->add_option("--config", c.config, "run config (JSON, flat dotted keys)");
  cmd->add_option("--seed", c.seed, "random seed");
  cmd->add_option("--out", c.out, "output directory");
}

grain::TrainConfig resolve_config(const Common& c, bool seed_given) {
  grain::TrainConfig cfg;
  if (!c.config.empty()) cfg = grain::load_run_config(c.config);
  if (seed_given || c.config.empty()) cfg.seed = c.seed;
  cfg.validate();
  return cfg;
}

fs::path output_dir(const Common& c) {
  const fs::path dir = c.out.empty() ? fs::path(".") : fs::path(c.out);
  fs::create_directories(dir);
  return dir;
}

void write_actions(const fs::path& path, const grain::ActionVector& a) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << "node_id\taction\n";
  for (std::size_t i = 0; i < a.size(); ++i) out << i << '\t' << grain::format_double(a[i]) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graph node classification with learned per-node hop granularity"};
  app.require_subcommand(1);

  Common common;
  auto* train = app.add_subcommand("train", "RL phase, final classifier and baselines; writes report.json");
  add_common(train, common, true);
  bool no_embedding = false;
  train->add_flag("--no-embedding", no_embedding, "skip embedding.tsv");

  auto* baseline = app.add_subcommand("baseline", "train the GCN and MLP baselines only");
  add_common(baseline, common, true);

  auto* homophily = app.add_subcommand("homophily", "print edge homophily of a dataset");
  add_common(homophily, common, true);

  grain::SynthConfig synth;
  auto* gen = app.add_subcommand("gen-synth", "generate a synthetic dataset directory");
  add_common(gen, common, false);
  gen->set_help_flag("--help", "print this help message and exit");  // frees -h/--h for homophily
  gen->add_option("--h", synth.h_target, "target edge homophily")->check(CLI::Range(0.0, 1.0));
  gen->add_option("--n", synth.n, "number of nodes");
  gen->add_option("--classes", synth.num_classes, "number of classes");
  gen->add_option("--degree", synth.avg_degree, "average degree");
  gen->add_option("--dim", synth.dim, "feature width");
  gen->add_option("--separation", synth.class_separation, "class mean scale");

  std::string content, cites, name;
  auto* convert = app.add_subcommand("convert", "convert content/cites files into a dataset directory");
  add_common(convert, common, false);
  convert->add_option("--content", content, "content file")->required();
  convert->add_option("--cites", cites, "cites file")->required();
  convert->add_option("--name", name, "dataset name");

  std::size_t instances = 50;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");
  add_common(gradcheck, common, false);
  gradcheck->add_option("--instances", instances, "random instances per op");

  auto* embed = app.add_subcommand("embed", "train and write only the 2-D embedding dump");
  add_common(embed, common, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    const bool seed_given = app.got_subcommand(train) ? train->count("--seed") > 0
                            : app.got_subcommand(embed) ? embed->count("--seed") > 0
                            : app.got_subcommand(baseline) ? baseline->count("--seed") > 0
                                                           : false;

    if (app.got_subcommand(train) || app.got_subcommand(embed)) {
      const grain::TrainConfig cfg = resolve_config(common, seed_given);
      const auto ds = grain::load_dataset(common.data, cfg.seed);
      const auto result = grain::run_pipeline(ds, cfg);
      const fs::path dir = output_dir(common);
      if (app.got_subcommand(train)) {
        grain::emit_report(result.report, (dir / "report.json").string());
        write_actions(dir / "actions.tsv", result.actions);
        if (!no_embedding) grain::write_embedding((dir / "embedding.tsv").string(), result.grain_logits, ds.labels);
        const auto& r = result.report;
        std::printf("grain test %.4f", r.grain.test_accuracy);
        if (r.gcn) std::printf("  gcn test %.4f", r.gcn->test_accuracy);
        if (r.mlp) std::printf("  mlp test %.4f", r.mlp->test_accuracy);
        std::printf("\n");
      } else {
        grain::write_embedding((dir / "embedding.tsv").string(), result.grain_logits, ds.labels);
      }
    } else if (app.got_subcommand(baseline)) {
      grain::TrainConfig cfg = resolve_config(common, seed_given);
      cfg.run_gcn = cfg.run_mlp = true;
      const auto ds = grain::load_dataset(common.data, cfg.seed);
      const auto b = grain::run_baselines(ds, cfg);
      nlohmann::json j;
      for (auto [key, res] : {std::pair{"gcn", &b.gcn}, std::pair{"mlp", &b.mlp}}) {
        const auto m = grain::ModelMetrics::from((*res)->fit);
        j[key] = {{"train_accuracy", m.train_accuracy},
                  {"val_accuracy", m.val_accuracy},
                  {"test_accuracy", m.test_accuracy},
                  {"best_epoch", m.best_epoch}};
      }
      j["dataset"] = ds.name;
      j["seed"] = cfg.seed;
      if (!common.out.empty()) {
        std::ofstream out(output_dir(common) / "baseline.json", std::ios::binary);
        out << j.dump(2) << "\n";
      }
      std::cout << j.dump() << "\n";
    } else if (app.got_subcommand(homophily)) {
      const auto ds = grain::load_dataset(common.data, common.seed);
      std::printf("%.3f\n", grain::edge_homophily(ds.graph, ds.labels));
    } else if (app.got_subcommand(gen)) {
      synth.seed = common.seed;
      auto ds = grain::generate_synthetic(synth);
      ds.name = "synthetic-h" + grain::format_double(synth.h_target);
      const fs::path dir = output_dir(common);
      grain::write_dataset(ds, dir);
      std::printf("wrote %zu nodes, %zu edges, homophily %.3f to %s\n", ds.n_nodes(),
                  ds.graph.undirected_edge_count(), grain::edge_homophily(ds.graph, ds.labels),
                  dir.string().c_str());
    } else if (app.got_subcommand(convert)) {
      if (common.out.empty()) throw std::invalid_argument("convert: --out is required");
      const auto rep = grain::convert_content_cites(content, cites, common.out, name);
      std::printf("nodes=%zu features=%zu classes=%zu edges=%zu dropped_unknown=%zu\n", rep.nodes, rep.features,
                  rep.classes, rep.edges_written, rep.dropped_unknown);
    } else if (app.got_subcommand(gradcheck)) {
      bool ok = true;
      for (const auto& c : grain::run_gradient_suite(instances, common.seed == 0 ? 7 : common.seed)) {
        std::printf("%-24s max_rel_error %.3e  tol %.0e  %s\n", c.op.c_str(), c.max_error, c.tolerance,
                    c.passed() ? "ok" : "FAIL");
        ok = ok && c.passed();
      }
      return ok ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
