// Writes the planted keyword task as a ready-to-run offline sample:
//   <dir>/dataset.jsonl, <dir>/synthetic_spec.json, <dir>/config.ini
//
//   make_planted_task samples/synthetic [--noise 0.1] [--seed 7]
//   rlie run --config samples/synthetic/config.ini

#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "rlie/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"write the planted keyword task"};
  std::string dir;
  rlie::PlantedTaskConfig cfg;
  app.add_option("dir", dir, "output directory")->required();
  app.add_option("--noise", cfg.noise, "judge flip probability");
  app.add_option("--seed", cfg.seed, "data seed");
  app.add_option("--examples", cfg.n_examples, "number of examples");
  CLI11_PARSE(app, argc, argv);

  try {
    const auto task = rlie::make_planted_task(cfg);
    std::filesystem::create_directories(dir);
    {
      std::ofstream out(std::filesystem::path(dir) / "dataset.jsonl");
      for (const auto& e : task.examples) out << rlie::json(e).dump() << '\n';
    }
    {
      std::ofstream out(std::filesystem::path(dir) / "synthetic_spec.json");
      out << rlie::json{{"judge", task.judge_spec}, {"generator", task.script}}.dump(2) << '\n';
    }
    {
      std::ofstream out(std::filesystem::path(dir) / "config.ini");
      out << "[run]\nname = planted\nrepeats = 3\nout_dir = runs\n\n"
          << "[dataset]\nname = synthetic\npath = dataset.jsonl\n\n"
          << "[model]\nkind = synthetic\nsynthetic_spec = synthetic_spec.json\n\n"
          << "[loop]\nmax_iterations = 5\n";
    }
    std::cout << "wrote " << task.examples.size() << " examples to " << dir << '\n';
  } catch (const std::exception& e) {
    return rlie::report_error(e, std::cerr);
  }
}
