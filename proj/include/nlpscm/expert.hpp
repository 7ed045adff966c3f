#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "nlpscm/graph.hpp"

namespace nlpscm {

/// Option number used by the edge prompt for each queryable category.
int prompt_option(EdgeCategory category);
/// Inverse of prompt_option; nullopt outside 0..6.
std::optional<EdgeCategory> category_from_option(int option);

struct PromptTemplate {
  std::string system;
  std::string user;
};

struct PromptSet {
  PromptTemplate edge;
  PromptTemplate confounder;
  PromptTemplate prior;

  /// Templates compiled into the library.
  static PromptSet defaults();
  /// Reads {edge,confounder,prior}.{system,user}.txt from a directory.
  static PromptSet load(const std::string& dir);
};

/// Replaces `{name}` with slots[name]. `{{` and `}}` become single braces;
/// braces that do not enclose a known slot name are copied unchanged.
std::string render_template(std::string_view text, const std::map<std::string, std::string>& slots);

/// Promoted facts as a sentence fragment, or "none".
std::string describe_background(const BackgroundKnowledge& background, const std::vector<std::string>& names);

struct ExpertAnswer {
  EdgeCategory category = EdgeCategory::NoEdge;
  std::optional<std::string> raw;
};

struct ConfounderAnswer {
  std::optional<std::string> name;  // nullopt means undefined
  std::optional<std::string> raw;
  bool undefined() const { return !name.has_value(); }
};

struct GaussianPrior {
  double mean = 0.0;
  double variance = 1.0;
  friend bool operator==(const GaussianPrior&, const GaussianPrior&) = default;
};

const std::vector<std::string>& default_distractors();

struct ExpertConfig {
  enum class Backend { Simulated, Http };
  Backend backend = Backend::Simulated;
  double noise = 0.0;

  std::string endpoint = "https://api.openai.com/v1/chat/completions";
  std::string model = "gpt-4o-mini";
  double temperature = 0.7;
  std::optional<std::string> template_dir;
  double timeout_seconds = 60.0;
  int retries = 2;
  std::string experiment_name;
  std::map<std::string, std::string> descriptions;

  std::vector<std::string> distractors = default_distractors();
  std::optional<GaussianPrior> prior;
  std::map<std::string, double> correlations;
};

/// The f_LM black box. Implementations may throw ExpertError.
class Expert {
 public:
  virtual ~Expert() = default;
  virtual ExpertAnswer query_edge(const std::string& a, const std::string& b, const std::string& known) = 0;
  virtual ConfounderAnswer query_confounder(const std::string& a, const std::string& b) = 0;
  virtual GaussianPrior query_prior(const std::string& confounder, const std::vector<std::string>& neighbors) = 0;
  virtual std::map<std::string, double> query_correlation(const std::string& confounder,
                                                          const std::vector<std::string>& neighbors) = 0;

  const std::vector<std::string>& warnings() const { return warnings_; }

 protected:
  std::vector<std::string> warnings_;
};

/// Answers from a ground-truth DAG. With probability `noise` an edge answer is
/// replaced by a uniform draw over the six other options and a confounder
/// answer by a distractor.
class SimulatedExpert final : public Expert {
 public:
  SimulatedExpert(Dag truth, const ExpertConfig& cfg, std::uint64_t seed);

  ExpertAnswer query_edge(const std::string& a, const std::string& b, const std::string& known) override;
  ConfounderAnswer query_confounder(const std::string& a, const std::string& b) override;
  GaussianPrior query_prior(const std::string& confounder, const std::vector<std::string>& neighbors) override;
  std::map<std::string, double> query_correlation(const std::string& confounder,
                                                  const std::vector<std::string>& neighbors) override;

 private:
  int lookup(const std::string& name) const;

  Dag truth_;
  double noise_;
  std::vector<std::string> distractors_;
  std::optional<GaussianPrior> prior_;
  std::map<std::string, double> correlations_;
  std::mt19937_64 rng_;
};

/// Sends the request body and returns the response body. Throws ExpertError.
using Transport = std::function<std::string(const nlohmann::json& request)>;

/// httplib-backed transport for an OpenAI-compatible endpoint.
Transport make_http_transport(const std::string& endpoint, const std::string& api_key, double timeout_seconds);

/// API key from NLPSCM_API_KEY, falling back to OPENAI_API_KEY.
std::string api_key_from_env();

class HttpExpert final : public Expert {
 public:
  HttpExpert(ExpertConfig cfg, std::vector<std::string> variables, Transport transport);

  ExpertAnswer query_edge(const std::string& a, const std::string& b, const std::string& known) override;
  ConfounderAnswer query_confounder(const std::string& a, const std::string& b) override;
  GaussianPrior query_prior(const std::string& confounder, const std::vector<std::string>& neighbors) override;
  std::map<std::string, double> query_correlation(const std::string& confounder,
                                                  const std::vector<std::string>& neighbors) override;

  /// Chat-completions request for the given rendered messages.
  nlohmann::json make_request(const std::string& system, const std::string& user) const;
  std::map<std::string, std::string> base_slots() const;

 private:
  std::string complete(const PromptTemplate& tmpl, const std::map<std::string, std::string>& slots);
  template <typename T>
  T with_retries(const PromptTemplate& tmpl, const std::map<std::string, std::string>& slots,
                 const std::function<T(const std::string&)>& parse);
  nlohmann::json prior_response(const std::string& confounder, const std::vector<std::string>& neighbors);

  ExpertConfig cfg_;
  std::vector<std::string> variables_;
  Transport transport_;
  PromptSet prompts_;
  std::map<std::string, nlohmann::json> prior_cache_;
};

/// Extracts the outermost JSON object from a model reply, tolerating code fences.
nlohmann::json parse_reply_object(const std::string& content);

}  // namespace nlpscm
