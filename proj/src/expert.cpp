#include "nlpscm/expert.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "httplib.h"
#include "nlpscm/error.hpp"
#include "prompt_defaults.hpp"

namespace nlpscm {

namespace {

// Prompt option -> category, in the order the edge prompt lists them.
constexpr std::array<EdgeCategory, kQueryableCategoryCount> kOptionCategory{
    EdgeCategory::NoEdge,          EdgeCategory::Directed,       EdgeCategory::Bidirected,
    EdgeCategory::PartialDirected, EdgeCategory::Nondirected,    EdgeCategory::ReverseDirected,
    EdgeCategory::ReversePartial,
};

bool is_slot_name(std::string_view s) {
  if (s.empty() || !(std::isalpha(static_cast<unsigned char>(s[0])) || s[0] == '_')) return false;
  return std::all_of(s.begin(), s.end(), [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; });
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot read template " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string join(const std::vector<std::string>& items, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += items[i];
  }
  return out;
}

std::string trim(std::string s) {
  auto space = [](unsigned char c) { return std::isspace(c) != 0; };
  s.erase(s.begin(), std::find_if_not(s.begin(), s.end(), space));
  s.erase(std::find_if_not(s.rbegin(), s.rend(), space).base(), s.end());
  return s;
}

std::optional<double> as_number(const nlohmann::json& v) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    const auto text = trim(v.get<std::string>());
    char* end = nullptr;
    const double x = std::strtod(text.c_str(), &end);
    if (!text.empty() && end == text.c_str() + text.size()) return x;
  }
  return std::nullopt;
}

}  // namespace

int prompt_option(EdgeCategory category) {
  for (std::size_t i = 0; i < kOptionCategory.size(); ++i) {
    if (kOptionCategory[i] == category) return static_cast<int>(i);
  }
  throw InvalidArgument("category has no prompt option: " + std::string(to_string(category)));
}

std::optional<EdgeCategory> category_from_option(int option) {
  if (option < 0 || option >= static_cast<int>(kOptionCategory.size())) return std::nullopt;
  return kOptionCategory[static_cast<std::size_t>(option)];
}

PromptSet PromptSet::defaults() {
  return {{std::string(prompts::kEdgeSystem), std::string(prompts::kEdgeUser)},
          {std::string(prompts::kConfounderSystem), std::string(prompts::kConfounderUser)},
          {std::string(prompts::kPriorSystem), std::string(prompts::kPriorUser)}};
}

PromptSet PromptSet::load(const std::string& dir) {
  auto part = [&dir](const std::string& name) {
    return PromptTemplate{read_file(dir + "/" + name + ".system.txt"), read_file(dir + "/" + name + ".user.txt")};
  };
  return {part("edge"), part("confounder"), part("prior")};
}

std::string render_template(std::string_view text, const std::map<std::string, std::string>& slots) {
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size();) {
    if (text.compare(i, 2, "{{") == 0 || text.compare(i, 2, "}}") == 0) {
      out += text[i];
      i += 2;
      continue;
    }
    if (text[i] == '{') {
      const auto close = text.find('}', i + 1);
      if (close != std::string_view::npos) {
        const auto name = text.substr(i + 1, close - i - 1);
        if (is_slot_name(name)) {
          const auto it = slots.find(std::string(name));
          if (it != slots.end()) {
            out += it->second;
            i = close + 1;
            continue;
          }
        }
      }
    }
    out += text[i];
    ++i;
  }
  return out;
}

std::string describe_background(const BackgroundKnowledge& background, const std::vector<std::string>& names) {
  std::vector<std::string> parts;
  for (const auto& [key, fact] : background.facts()) {
    const auto& a = names.at(static_cast<std::size_t>(key.lo));
    const auto& b = names.at(static_cast<std::size_t>(key.hi));
    if (fact.category == EdgeCategory::NoEdge) {
      parts.push_back("no causal relationship between " + a + " and " + b);
      continue;
    }
    Pag tiny({a, b});
    tiny.set_category(0, 1, fact.category);
    auto line = serialize_pag(tiny);
    // Drop the header line; keep the single edge line.
    line = line.substr(line.find('\n') + 1);
    parts.push_back(trim(line));
  }
  return parts.empty() ? "none" : join(parts, "; ");
}

const std::vector<std::string>& default_distractors() {
  static const std::vector<std::string> names{"grape_quality", "grape_maturity", "grape_ripeness", "grape_type",
                                              "wine_age",      "sugar_content",  "acidity_level",  "vineyard"};
  return names;
}

// ---------------------------------------------------------------- simulated

SimulatedExpert::SimulatedExpert(Dag truth, const ExpertConfig& cfg, std::uint64_t seed)
    : truth_(std::move(truth)),
      noise_(cfg.noise),
      distractors_(cfg.distractors),
      prior_(cfg.prior),
      correlations_(cfg.correlations),
      rng_(seed) {
  if (noise_ < 0.0 || noise_ > 1.0) throw InvalidArgument("expert noise must lie in [0, 1]");
}

int SimulatedExpert::lookup(const std::string& name) const {
  const int v = truth_.index_of(name);
  if (truth_.is_latent(v)) throw InvalidArgument("expert queried about a latent variable: " + name);
  return v;
}

ExpertAnswer SimulatedExpert::query_edge(const std::string& a, const std::string& b, const std::string&) {
  const int ia = lookup(a);
  const int ib = lookup(b);
  if (ia == ib) throw InvalidArgument("expert edge query needs two distinct variables");
  const EdgeCategory truth = truth_.true_category(ia, ib);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  if (coin(rng_) >= noise_) return {truth, std::nullopt};
  std::uniform_int_distribution<int> pick(0, static_cast<int>(kQueryableCategoryCount) - 2);
  int k = pick(rng_);
  if (k >= static_cast<int>(truth)) ++k;
  return {static_cast<EdgeCategory>(k), std::nullopt};
}

ConfounderAnswer SimulatedExpert::query_confounder(const std::string& a, const std::string& b) {
  const auto latent = truth_.confounder_of(lookup(a), lookup(b));
  std::optional<std::string> truth;
  if (latent) truth = truth_.variables()[static_cast<std::size_t>(*latent)];
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  if (coin(rng_) >= noise_) return {truth, std::nullopt};
  std::vector<std::string> pool;
  for (const auto& d : distractors_) {
    if (!truth || d != *truth) pool.push_back(d);
  }
  if (pool.empty()) return {std::nullopt, std::nullopt};
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  return {pool[pick(rng_)], std::nullopt};
}

GaussianPrior SimulatedExpert::query_prior(const std::string&, const std::vector<std::string>&) {
  return prior_.value_or(GaussianPrior{});
}

std::map<std::string, double> SimulatedExpert::query_correlation(const std::string&,
                                                                 const std::vector<std::string>& neighbors) {
  std::map<std::string, double> out;
  for (const auto& n : neighbors) {
    const auto it = correlations_.find(n);
    if (it != correlations_.end()) out[n] = std::clamp(it->second, -1.0, 1.0);
  }
  return out;
}

// ---------------------------------------------------------------- http

std::string api_key_from_env() {
  for (const char* name : {"NLPSCM_API_KEY", "OPENAI_API_KEY"}) {
    if (const char* v = std::getenv(name); v && *v) return v;
  }
  return {};
}

Transport make_http_transport(const std::string& endpoint, const std::string& api_key, double timeout_seconds) {
  const auto scheme_end = endpoint.find("://");
  if (scheme_end == std::string::npos) throw InvalidArgument("endpoint needs a scheme: " + endpoint);
  const auto path_start = endpoint.find('/', scheme_end + 3);
  const std::string base = endpoint.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : endpoint.substr(path_start);
  return [base, path, api_key, timeout_seconds](const nlohmann::json& request) -> std::string {
    httplib::Client client(base);
    const auto secs = static_cast<time_t>(timeout_seconds);
    const auto usecs = static_cast<time_t>((timeout_seconds - static_cast<double>(secs)) * 1e6);
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);
    if (!api_key.empty()) client.set_bearer_token_auth(api_key);
    auto res = client.Post(path, request.dump(), "application/json");
    if (!res) {
      const auto err = res.error();
      if (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read) {
        throw ExpertError(ExpertError::Kind::Timeout, "expert request timed out: " + httplib::to_string(err));
      }
      throw ExpertError(ExpertError::Kind::Transport, "expert request failed: " + httplib::to_string(err));
    }
    if (res->status == 401 || res->status == 403) {
      throw ExpertError(ExpertError::Kind::Authentication, "expert endpoint rejected credentials (HTTP " +
                                                               std::to_string(res->status) + ")");
    }
    if (res->status != 200) {
      throw ExpertError(ExpertError::Kind::Transport, "expert endpoint returned HTTP " + std::to_string(res->status));
    }
    return res->body;
  };
}

nlohmann::json parse_reply_object(const std::string& content) {
  const auto open = content.find('{');
  const auto close = content.rfind('}');
  if (open == std::string::npos || close == std::string::npos || close < open) {
    throw ExpertError(ExpertError::Kind::Parse, "reply holds no JSON object");
  }
  auto j = nlohmann::json::parse(content.substr(open, close - open + 1), nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ExpertError(ExpertError::Kind::Parse, "reply JSON does not parse");
  return j;
}

HttpExpert::HttpExpert(ExpertConfig cfg, std::vector<std::string> variables, Transport transport)
    : cfg_(std::move(cfg)),
      variables_(std::move(variables)),
      transport_(std::move(transport)),
      prompts_(cfg_.template_dir ? PromptSet::load(*cfg_.template_dir) : PromptSet::defaults()) {
  if (!transport_) throw InvalidArgument("http expert needs a transport");
}

std::map<std::string, std::string> HttpExpert::base_slots() const {
  std::vector<std::string> desc;
  for (const auto& v : variables_) {
    const auto it = cfg_.descriptions.find(v);
    desc.push_back(v + ": " + (it == cfg_.descriptions.end() ? v : it->second));
  }
  return {{"experiment_name", cfg_.experiment_name},
          {"variables", join(variables_, ", ")},
          {"variable_description", " " + join(desc, "; ")}};
}

nlohmann::json HttpExpert::make_request(const std::string& system, const std::string& user) const {
  nlohmann::ordered_json req;
  req["model"] = cfg_.model;
  req["temperature"] = cfg_.temperature;
  req["messages"] = nlohmann::ordered_json::array(
      {{{"role", "system"}, {"content", system}}, {{"role", "user"}, {"content", user}}});
  return req;
}

std::string HttpExpert::complete(const PromptTemplate& tmpl, const std::map<std::string, std::string>& slots) {
  const auto body = transport_(make_request(render_template(tmpl.system, slots), render_template(tmpl.user, slots)));
  const auto j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded()) throw ExpertError(ExpertError::Kind::Parse, "response body is not JSON");
  try {
    return j.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception&) {
    throw ExpertError(ExpertError::Kind::Parse, "response lacks choices[0].message.content");
  }
}

template <typename T>
T HttpExpert::with_retries(const PromptTemplate& tmpl, const std::map<std::string, std::string>& slots,
                           const std::function<T(const std::string&)>& parse) {
  for (int attempt = 0;; ++attempt) {
    try {
      return parse(complete(tmpl, slots));
    } catch (const ExpertError& e) {
      if (e.kind() == ExpertError::Kind::Authentication || attempt >= cfg_.retries) throw;
      warnings_.push_back(std::string("retrying expert call: ") + e.what());
    }
  }
}

ExpertAnswer HttpExpert::query_edge(const std::string& a, const std::string& b, const std::string& known) {
  auto slots = base_slots();
  slots["A"] = a;
  slots["B"] = b;
  slots["known_relationship"] = known;
  return with_retries<ExpertAnswer>(prompts_.edge, slots, [](const std::string& content) {
    const auto j = parse_reply_object(content);
    if (!j.contains("option")) throw ExpertError(ExpertError::Kind::Parse, "reply lacks 'option'");
    const auto v = as_number(j["option"]);
    if (!v || *v != static_cast<double>(static_cast<int>(*v))) {
      throw ExpertError(ExpertError::Kind::Parse, "'option' is not an integer");
    }
    const auto cat = category_from_option(static_cast<int>(*v));
    if (!cat) throw ExpertError(ExpertError::Kind::Parse, "'option' outside 0..6");
    return ExpertAnswer{*cat, content};
  });
}

ConfounderAnswer HttpExpert::query_confounder(const std::string& a, const std::string& b) {
  auto slots = base_slots();
  slots["latent_0"] = a;
  slots["latent_1"] = b;
  return with_retries<ConfounderAnswer>(prompts_.confounder, slots, [](const std::string& content) {
    std::string name = trim(content);
    auto strip = [](unsigned char c) { return c == '"' || c == '\'' || c == '`' || c == '.'; };
    while (!name.empty() && strip(static_cast<unsigned char>(name.front()))) name.erase(name.begin());
    while (!name.empty() && strip(static_cast<unsigned char>(name.back()))) name.pop_back();
    name = trim(name);
    if (name.empty()) throw ExpertError(ExpertError::Kind::Parse, "empty confounder name");
    std::string lower = name;
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    if (lower == "undefined") return ConfounderAnswer{std::nullopt, content};
    // Keep at most three words.
    std::istringstream words(name);
    std::vector<std::string> kept;
    for (std::string w; kept.size() < 3 && words >> w;) kept.push_back(w);
    return ConfounderAnswer{join(kept, " "), content};
  });
}

nlohmann::json HttpExpert::prior_response(const std::string& confounder, const std::vector<std::string>& neighbors) {
  const std::string key = confounder + "\n" + join(neighbors, "\n");
  if (const auto it = prior_cache_.find(key); it != prior_cache_.end()) return it->second;
  auto slots = base_slots();
  slots["confounder"] = confounder;
  slots["latent"] = confounder;
  slots["variable_1"] = neighbors.size() > 0 ? neighbors[0] : "";
  slots["variable_2"] = neighbors.size() > 1 ? neighbors[1] : "";
  auto j = with_retries<nlohmann::json>(prompts_.prior, slots,
                                        [](const std::string& content) { return parse_reply_object(content); });
  prior_cache_[key] = j;
  return j;
}

GaussianPrior HttpExpert::query_prior(const std::string& confounder, const std::vector<std::string>& neighbors) {
  const auto j = prior_response(confounder, neighbors);
  const auto mean = j.contains("mean") ? as_number(j["mean"]) : std::nullopt;
  const auto variance = j.contains("variance") ? as_number(j["variance"]) : std::nullopt;
  if (!mean || !variance) throw ExpertError(ExpertError::Kind::Parse, "prior reply lacks numeric mean/variance");
  GaussianPrior prior{*mean, *variance};
  if (!(prior.variance > 0.0)) {
    warnings_.push_back("nonpositive prior variance for " + confounder + " replaced by 1.0");
    prior.variance = 1.0;
  }
  return prior;
}

std::map<std::string, double> HttpExpert::query_correlation(const std::string& confounder,
                                                            const std::vector<std::string>& neighbors) {
  std::map<std::string, double> out;
  nlohmann::json j;
  try {
    j = prior_response(confounder, neighbors);
  } catch (const ExpertError& e) {
    if (e.kind() == ExpertError::Kind::Authentication) throw;
    warnings_.push_back(std::string("correlation query failed: ") + e.what());
    return out;
  }
  if (!j.contains("correlation") || !j["correlation"].is_object()) return out;
  for (const auto& [name, value] : j["correlation"].items()) {
    const auto rho = as_number(value);
    if (!rho) continue;
    if (*rho < -1.0 || *rho > 1.0) warnings_.push_back("correlation for " + name + " clamped to [-1, 1]");
    out[name] = std::clamp(*rho, -1.0, 1.0);
  }
  return out;
}

}  // namespace nlpscm
