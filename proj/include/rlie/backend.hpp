#pragma once

// Pluggable chat backends. Every model interaction in the pipeline goes
// through Backend::complete with a rendered system/user prompt. Requests
// also carry the structured inputs they were rendered from; remote backends
// ignore them, offline backends (synthetic, scripted test doubles) read them.

#include <array>
#include <atomic>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "rlie/core.hpp"
#include "rlie/prompt.hpp"

namespace rlie {

enum class Purpose { Judge, GenerateInitial, GenerateRefinement, Infer };

inline const char* to_string(Purpose p) {
  switch (p) {
    case Purpose::Judge: return "judge";
    case Purpose::GenerateInitial: return "generate-initial";
    case Purpose::GenerateRefinement: return "generate-refinement";
    case Purpose::Infer: return "infer";
  }
  return "?";
}

struct ChatRequest {
  RenderedPrompt prompt;
  Purpose purpose = Purpose::Judge;

  // Structured context.
  std::optional<Rule> rule;                // Judge
  std::optional<Example> example;          // Judge, Infer
  std::vector<Rule> rules;                 // Infer
  std::vector<double> weights;             // Infer (E3/E4), aligned to `rules`
  std::optional<double> bias;              // Infer (E3/E4)
  std::optional<int> reference_label;      // Infer (E4)
  int iteration = 0;                       // Generate: loop iteration (1-based)
};

struct BackendCapabilities {
  std::string name;
  std::size_t max_in_flight = 1;
  bool supports_batching = false;
};

// complete() must be safe to call concurrently when max_in_flight > 1.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual BackendCapabilities capabilities() const = 0;
  // Identifies the model for cache keys.
  virtual std::string model_name() const = 0;
  virtual std::string complete(const ChatRequest& request) = 0;
};

// Forwards to another backend and counts calls.
class CountingBackend : public Backend {
 public:
  explicit CountingBackend(Backend& inner) : inner_(inner) {}

  BackendCapabilities capabilities() const override { return inner_.capabilities(); }
  std::string model_name() const override { return inner_.model_name(); }
  std::string complete(const ChatRequest& request) override {
    ++calls_;
    ++by_purpose_[static_cast<std::size_t>(request.purpose)];
    return inner_.complete(request);
  }

  std::size_t calls() const noexcept { return calls_.load(); }
  std::size_t calls(Purpose p) const noexcept { return by_purpose_[static_cast<std::size_t>(p)].load(); }
  void reset() noexcept {
    calls_ = 0;
    for (auto& c : by_purpose_) c = 0;
  }

 private:
  Backend& inner_;
  std::atomic<std::size_t> calls_{0};
  std::array<std::atomic<std::size_t>, 4> by_purpose_{};
};

// Answers with a user-supplied function; records every request. Test double
// and building block for canned transports.
class FunctionBackend : public Backend {
 public:
  using Handler = std::function<std::string(const ChatRequest&)>;

  FunctionBackend(std::string name, Handler handler, std::size_t max_in_flight = 1)
      : name_(std::move(name)), handler_(std::move(handler)), max_in_flight_(max_in_flight) {}

  BackendCapabilities capabilities() const override { return {name_, max_in_flight_, false}; }
  std::string model_name() const override { return name_; }

  std::string complete(const ChatRequest& request) override {
    {
      std::lock_guard lock(mu_);
      requests_.push_back(request);
    }
    return handler_(request);
  }

  std::vector<ChatRequest> requests() const {
    std::lock_guard lock(mu_);
    return requests_;
  }

 private:
  std::string name_;
  Handler handler_;
  std::size_t max_in_flight_;
  mutable std::mutex mu_;
  std::vector<ChatRequest> requests_;
};

}  // namespace rlie
