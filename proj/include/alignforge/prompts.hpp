#pragma once

#include <filesystem>
#include <string>

#include "alignforge/preference_space.hpp"

namespace alignforge::annotation {

// Versioned prompt templates with {placeholder} substitution. Rendering is
// pure string work; identical inputs yield identical bytes.
class PromptLibrary {
 public:
  static PromptLibrary load(const std::filesystem::path& prompt_dir);

  // Intensity-annotation prompt for one (post, response, dimension).
  std::string intensity_prompt(const std::string& post, const std::string& response,
                               const space::DimensionSpec& dim) const;

  // Demographic generation + direction annotation prompt for a pair.
  std::string demographic_prompt(const std::string& post, const std::string& chosen,
                                 const std::string& rejected) const;

  // Pairwise judgment prompt; history is the caller-assembled persona block.
  std::string judge_prompt(const std::string& history, const std::string& query,
                           const std::string& response_a, const std::string& response_b) const;

  const std::string& ica_template() const { return ica_; }
  const std::string& pba_template() const { return pba_; }

  // The per-dimension question line used inside the intensity prompt.
  static std::string intensity_question(const space::DimensionSpec& dim);

 private:
  std::string intensity_;
  std::string demographic_;
  std::string judge_;
  std::string ica_;
  std::string pba_;
};

}  // namespace alignforge::annotation
