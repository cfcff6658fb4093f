#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <mutex>
#include <string>
#include <string_view>

#include <json.hpp>

#include "koi/semantic.h"

namespace koi {

struct VlmConfig {
  // Full chat-completions URL, e.g. https://host/v1/chat/completions.
  std::string endpoint;
  std::string api_key;
  std::string model = "gpt-4o";
  std::filesystem::path prompt_dir = "prompts";
  // Request-rate ceiling shared by all calls on one annotator.
  double max_requests_per_minute = 30.0;
  int timeout_seconds = 120;

  // Reads KOI_VLM_ENDPOINT and KOI_VLM_API_KEY; throws if either is unset.
  static VlmConfig from_env();
};

// 8-bit grayscale PNG, intensities clamped to [0, 1].
std::string encode_png(const Frame& frame);
std::string base64_encode(std::string_view bytes);

// Replaces each {name} with vars[name]; unknown placeholders throw.
std::string fill_template(const std::string& tmpl,
                          const std::map<std::string, std::string>& vars);

// First JSON object in a model reply, tolerating code fences and prose.
// Throws FormatError carrying the raw reply.
nlohmann::json parse_reply_object(const std::string& content);

// OpenAI-compatible chat-completions client.
class VlmAnnotator : public Annotator {
 public:
  explicit VlmAnnotator(VlmConfig config);

  std::vector<std::string> decompose(const std::string& task) override;
  std::vector<int> select_keys(const QuerySet& query,
                               const SubgoalList& subgoals) override;

  // Request bodies, exposed for inspection.
  nlohmann::json decompose_request(const std::string& task) const;
  nlohmann::json select_keys_request(const QuerySet& query,
                                     const SubgoalList& subgoals) const;

 private:
  std::string complete(const nlohmann::json& body);
  std::string load_prompt(const std::string& name) const;

  VlmConfig config_;
  std::mutex rate_mutex_;
  std::chrono::steady_clock::time_point last_request_{};
  bool any_request_ = false;
};

}  // namespace koi
