#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "alignforge/common.hpp"

namespace alignforge {

using Json = nlohmann::json;

// Calls fn(record, line_number) for each non-empty line. Parse failures
// raise IoError with the offending line number.
void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(const Json&, std::size_t)>& fn);

std::vector<Json> read_jsonl(const std::filesystem::path& path);

// One compact record per line; keys come out in nlohmann's sorted order, so
// files are byte-stable across runs.
class JsonlWriter {
 public:
  explicit JsonlWriter(const std::filesystem::path& path);

  void write(const Json& record);
  std::size_t count() const { return count_; }
  void flush() { out_.flush(); }

 private:
  std::ofstream out_;
  std::filesystem::path path_;
  std::size_t count_ = 0;
};

}  // namespace alignforge
