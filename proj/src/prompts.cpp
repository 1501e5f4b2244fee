#include "alignforge/prompts.hpp"

#include <fstream>
#include <sstream>

#include "alignforge/common.hpp"

namespace alignforge::annotation {

namespace {

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open prompt template " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

PromptLibrary PromptLibrary::load(const std::filesystem::path& prompt_dir) {
  PromptLibrary lib;
  lib.intensity_ = read_text_file(prompt_dir / "intensity.txt");
  lib.demographic_ = read_text_file(prompt_dir / "demographic.txt");
  lib.judge_ = read_text_file(prompt_dir / "judge.txt");
  lib.ica_ = read_text_file(prompt_dir / "ica.txt");
  lib.pba_ = read_text_file(prompt_dir / "pba.txt");
  return lib;
}

std::string PromptLibrary::intensity_question(const space::DimensionSpec& dim) {
  using space::RenderKind;
  switch (dim.render_kind) {
    case RenderKind::Trait:
      return "What does this comment suggest about the commenter's " + dim.display_name +
             "? (1) High " + dim.positive_phrase + " (2) Low " + dim.negative_phrase +
             " (3) Comments alone cannot reflect";
    case RenderKind::Style:
      return "What does this comment suggest about the commenter's " + dim.display_name +
             "? (1) Prefers " + dim.positive_phrase + " (2) Avoids " + dim.positive_phrase +
             " (3) Comments alone cannot reflect";
    case RenderKind::Value:
      return "What does this comment suggest about the commenter's " + dim.display_name +
             "? (1) " + dim.positive_phrase + " (2) " + dim.negative_phrase +
             " (3) Comments alone cannot reflect";
    case RenderKind::Tag:
      return "Does this comment indicate that the commenter likes or dislikes \"" +
             dim.display_name + "\"? (1) Likes (2) Dislikes (3) Comments alone cannot reflect";
  }
  return {};
}

std::string PromptLibrary::intensity_prompt(const std::string& post, const std::string& response,
                                            const space::DimensionSpec& dim) const {
  std::string text = intensity_;
  text = replace_all(std::move(text), "{post}", post);
  text = replace_all(std::move(text), "{comment}", response);
  text = replace_all(std::move(text), "{question}", intensity_question(dim));
  return text;
}

std::string PromptLibrary::demographic_prompt(const std::string& post, const std::string& chosen,
                                              const std::string& rejected) const {
  std::string text = demographic_;
  text = replace_all(std::move(text), "{post}", post);
  text = replace_all(std::move(text), "{response_1}", chosen);
  text = replace_all(std::move(text), "{response_2}", rejected);
  return text;
}

std::string PromptLibrary::judge_prompt(const std::string& history, const std::string& query,
                                        const std::string& response_a,
                                        const std::string& response_b) const {
  std::string text = judge_;
  text = replace_all(std::move(text), "{history}", history);
  text = replace_all(std::move(text), "{query}", query);
  text = replace_all(std::move(text), "{response_a}", response_a);
  text = replace_all(std::move(text), "{response_b}", response_b);
  return text;
}

}  // namespace alignforge::annotation
