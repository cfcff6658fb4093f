#include "koi/vlm.h"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <openssl/evp.h>
#include <zlib.h>

namespace koi {
namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<char>((v >> s) & 0xFF));
}

void put_chunk(std::string& out, const char* type, const std::string& data) {
  put_u32(out, static_cast<std::uint32_t>(data.size()));
  std::string body = std::string(type, 4) + data;
  out += body;
  uLong crc = crc32(0L, reinterpret_cast<const Bytef*>(body.data()),
                    static_cast<uInt>(body.size()));
  put_u32(out, static_cast<std::uint32_t>(crc));
}

std::pair<std::string, std::string> split_url(const std::string& url) {
  auto scheme = url.find("://");
  if (scheme == std::string::npos)
    throw InvariantError("endpoint '" + url + "' has no scheme");
  auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

std::string subgoal_lines(const SubgoalList& subgoals) {
  std::string out;
  for (int i = 0; i < subgoals.size(); ++i)
    out += std::to_string(i + 1) + ". " + subgoals.subgoals[i] + "\n";
  return out;
}

nlohmann::json text_part(const std::string& text) {
  return {{"type", "text"}, {"text", text}};
}

}  // namespace

VlmConfig VlmConfig::from_env() {
  const char* endpoint = std::getenv("KOI_VLM_ENDPOINT");
  const char* key = std::getenv("KOI_VLM_API_KEY");
  if (!endpoint || !*endpoint)
    throw InvariantError("KOI_VLM_ENDPOINT is not set");
  if (!key || !*key) throw InvariantError("KOI_VLM_API_KEY is not set");
  VlmConfig c;
  c.endpoint = endpoint;
  c.api_key = key;
  return c;
}

std::string encode_png(const Frame& frame) {
  const int h = static_cast<int>(frame.rows()), w = static_cast<int>(frame.cols());
  if (h < 1 || w < 1) throw DimensionError("cannot encode an empty frame");
  std::string raw;
  raw.reserve(static_cast<std::size_t>(h) * (w + 1));
  for (int r = 0; r < h; ++r) {
    raw.push_back('\0');  // filter: none
    for (int c = 0; c < w; ++c) {
      double v = std::clamp(frame(r, c), 0.0, 1.0);
      raw.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
  }
  uLongf size = compressBound(static_cast<uLong>(raw.size()));
  std::string deflated(size, '\0');
  if (compress2(reinterpret_cast<Bytef*>(deflated.data()), &size,
                reinterpret_cast<const Bytef*>(raw.data()),
                static_cast<uLong>(raw.size()), Z_BEST_COMPRESSION) != Z_OK)
    throw Error("zlib compression failed");
  deflated.resize(size);

  std::string png("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  put_u32(ihdr, static_cast<std::uint32_t>(w));
  put_u32(ihdr, static_cast<std::uint32_t>(h));
  ihdr += std::string("\x08\x00\x00\x00\x00", 5);  // 8-bit gray
  put_chunk(png, "IHDR", ihdr);
  put_chunk(png, "IDAT", deflated);
  put_chunk(png, "IEND", "");
  return png;
}

std::string base64_encode(std::string_view bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3) + 1, '\0');
  int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                          reinterpret_cast<const unsigned char*>(bytes.data()),
                          static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string fill_template(const std::string& tmpl,
                          const std::map<std::string, std::string>& vars) {
  std::string out;
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    auto open = tmpl.find('{', pos);
    if (open == std::string::npos) break;
    auto close = tmpl.find('}', open);
    std::string name = close == std::string::npos
                           ? std::string()
                           : tmpl.substr(open + 1, close - open - 1);
    bool placeholder =
        !name.empty() && std::all_of(name.begin(), name.end(), [](char ch) {
          return std::isalnum(static_cast<unsigned char>(ch)) || ch == '_';
        });
    if (!placeholder) {
      // Literal brace, e.g. a JSON example in the prompt.
      out.append(tmpl, pos, open + 1 - pos);
      pos = open + 1;
      continue;
    }
    auto it = vars.find(name);
    if (it == vars.end())
      throw InvariantError("prompt placeholder {" + name + "} has no value");
    out.append(tmpl, pos, open - pos);
    out += it->second;
    pos = close + 1;
  }
  out.append(tmpl, pos, std::string::npos);
  return out;
}

nlohmann::json parse_reply_object(const std::string& content) {
  auto open = content.find('{');
  auto close = content.rfind('}');
  if (open == std::string::npos || close == std::string::npos || close < open)
    throw FormatError("annotator reply contains no JSON object", content);
  auto j = nlohmann::json::parse(content.begin() + open,
                                 content.begin() + close + 1, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    throw FormatError("annotator reply is not valid JSON", content);
  return j;
}

VlmAnnotator::VlmAnnotator(VlmConfig config) : config_(std::move(config)) {
  if (config_.endpoint.empty()) throw InvariantError("VLM endpoint is empty");
  if (!(config_.max_requests_per_minute > 0))
    throw InvariantError("request rate ceiling must be positive");
  split_url(config_.endpoint);
}

std::string VlmAnnotator::load_prompt(const std::string& name) const {
  auto path = config_.prompt_dir / name;
  std::ifstream in(path);
  if (!in) throw IoError("cannot read prompt template " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json VlmAnnotator::decompose_request(const std::string& task) const {
  std::string prompt = fill_template(load_prompt("decompose.txt"), {{"task", task}});
  return {{"model", config_.model},
          {"temperature", 0},
          {"messages", {{{"role", "user"}, {"content", {text_part(prompt)}}}}}};
}

nlohmann::json VlmAnnotator::select_keys_request(
    const QuerySet& query, const SubgoalList& subgoals) const {
  std::string prompt = fill_template(
      load_prompt("select_keys.txt"),
      {{"task", subgoals.task_description},
       {"subgoals", subgoal_lines(subgoals)},
       {"frame_count", std::to_string(query.indices.size())}});
  nlohmann::json content = nlohmann::json::array({text_part(prompt)});
  for (std::size_t i = 0; i < query.indices.size(); ++i) {
    content.push_back(text_part("Time step " + std::to_string(query.indices[i]) + ":"));
    content.push_back(
        {{"type", "image_url"},
         {"image_url",
          {{"url", "data:image/png;base64," + base64_encode(encode_png(query.frames[i]))}}}});
  }
  return {{"model", config_.model},
          {"temperature", 0},
          {"messages", {{{"role", "user"}, {"content", content}}}}};
}

std::string VlmAnnotator::complete(const nlohmann::json& body) {
  {
    std::lock_guard lock(rate_mutex_);
    auto gap = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
        std::chrono::duration<double>(60.0 / config_.max_requests_per_minute));
    if (any_request_) std::this_thread::sleep_until(last_request_ + gap);
    last_request_ = std::chrono::steady_clock::now();
    any_request_ = true;
  }

  auto [base, path] = split_url(config_.endpoint);
  httplib::Client client(base);
  client.set_connection_timeout(config_.timeout_seconds);
  client.set_read_timeout(config_.timeout_seconds);
  httplib::Headers headers;
  if (!config_.api_key.empty())
    headers.emplace("Authorization", "Bearer " + config_.api_key);
  auto res = client.Post(path, headers, body.dump(), "application/json");
  if (!res)
    throw AnnotatorError("request to " + config_.endpoint + " failed: " +
                         httplib::to_string(res.error()));
  if (res->status != 200)
    throw AnnotatorError("annotator returned HTTP " + std::to_string(res->status) +
                         ": " + res->body);

  auto j = nlohmann::json::parse(res->body, nullptr, false);
  if (j.is_discarded())
    throw FormatError("annotator response is not JSON", res->body);
  try {
    return j.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception&) {
    throw FormatError("annotator response has no message content", res->body);
  }
}

std::vector<std::string> VlmAnnotator::decompose(const std::string& task) {
  std::string content = complete(decompose_request(task));
  auto j = parse_reply_object(content);
  try {
    auto list = j.at("subgoals").get<std::vector<std::string>>();
    if (list.empty()) throw FormatError("annotator returned no subgoals", content);
    return list;
  } catch (const nlohmann::json::exception&) {
    throw FormatError("reply lacks a \"subgoals\" string array", content);
  }
}

std::vector<int> VlmAnnotator::select_keys(const QuerySet& query,
                                           const SubgoalList& subgoals) {
  std::string content = complete(select_keys_request(query, subgoals));
  auto j = parse_reply_object(content);
  try {
    return j.at("indices").get<std::vector<int>>();
  } catch (const nlohmann::json::exception&) {
    throw FormatError("reply lacks an \"indices\" integer array", content);
  }
}

}  // namespace koi
