#pragma once

// Offline end-to-end fixture: planted task, synthetic backend, in-memory
// or file-backed cache.

#include <atomic>
#include <memory>

#include "support.hpp"

namespace rlie::testing {

struct PlantedRun {
  PlantedTask task;
  TemplateSet templates;
  SplitBundle splits;
  std::unique_ptr<JudgmentCache> cache;
  std::unique_ptr<SyntheticBackend> backend;
  LoopConfig loop;
  CombinerConfig combiner;

  explicit PlantedRun(const PlantedTaskConfig& cfg = {}, std::uint64_t seed = 0,
                      const std::filesystem::path& cache_path = {})
      : task(make_planted_task(cfg)),
        templates(TemplateSet::load(template_dir("synthetic"))),
        splits(make_splits(task.examples, {}, seed)),
        cache(std::make_unique<JudgmentCache>(cache_path)),
        backend(std::make_unique<SyntheticBackend>(task.judge_spec, task.script, task.manifest)) {
    loop.seed = seed;
    loop.max_iterations = 5;
  }

  RunResult run(Backend& generator, Backend& judge, std::optional<std::filesystem::path> run_dir = {}) {
    return run_rlie(splits, {generator, judge}, LoopInputs{task.manifest, templates, *cache, loop, combiner, run_dir});
  }
  RunResult run(std::optional<std::filesystem::path> run_dir = {}) { return run(*backend, *backend, run_dir); }

  EvalContext context(Backend& judge, Backend& inference) {
    return EvalContext{task.manifest, templates, *cache, judge, inference, combiner.predict};
  }
};

// dataset.jsonl, synthetic_spec.json and config.ini for the planted task;
// returns the config path. `extra` is appended to the config.
inline std::filesystem::path write_planted_workspace(const std::filesystem::path& dir,
                                                     const PlantedTaskConfig& cfg = {},
                                                     const std::string& extra = "") {
  const auto task = make_planted_task(cfg);
  std::string lines;
  for (const auto& e : task.examples) lines += json(e).dump() + "\n";
  write_file(dir / "dataset.jsonl", lines);
  write_file(dir / "synthetic_spec.json", json{{"judge", task.judge_spec}, {"generator", task.script}}.dump(2));
  write_file(dir / "config.ini",
             "[run]\nname = planted\nrepeats = 3\nout_dir = runs\n\n"
             "[dataset]\nname = synthetic\npath = dataset.jsonl\n\n"
             "[model]\nkind = synthetic\nsynthetic_spec = synthetic_spec.json\n\n"
             "[loop]\nmax_iterations = 5\n" +
                 extra);
  return dir / "config.ini";
}

// Wraps a backend; throws BackendError once `budget` calls have succeeded.
class FailingAfter : public Backend {
 public:
  FailingAfter(Backend& inner, std::size_t budget) : inner_(inner), budget_(budget) {}
  BackendCapabilities capabilities() const override { return inner_.capabilities(); }
  std::string model_name() const override { return inner_.model_name(); }
  std::string complete(const ChatRequest& r) override {
    if (served_.fetch_add(1) >= budget_) throw BackendError("simulated crash");
    return inner_.complete(r);
  }

 private:
  Backend& inner_;
  std::size_t budget_;
  std::atomic<std::size_t> served_{0};
};

}  // namespace rlie::testing
