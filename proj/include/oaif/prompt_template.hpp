#pragma once

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "oaif/vocab.hpp"

namespace oaif {

/// Pairwise judging prompt with {context} (or {text}), {response1} and
/// {response2} placeholders.
struct PromptTemplate {
  std::string name;
  std::string text;

  void validate() const {
    if (count_of("{response1}") != 1 || count_of("{response2}") != 1) {
      throw std::invalid_argument(
          "PromptTemplate '" + name +
          "': both response placeholders must appear exactly once");
    }
    if (count_of("{context}") + count_of("{text}") < 1) {
      throw std::invalid_argument("PromptTemplate '" + name +
                                  "': missing {context}/{text} placeholder");
    }
  }

  std::string fill(const std::string& context, const std::string& response1,
                   const std::string& response2) const {
    std::string out = text;
    replace_once(out, "{context}", context);
    replace_once(out, "{text}", context);
    replace_once(out, "{response1}", response1);
    replace_once(out, "{response2}", response2);
    return out;
  }

 private:
  std::size_t count_of(const std::string& needle) const {
    std::size_t count = 0;
    for (std::size_t pos = text.find(needle); pos != std::string::npos;
         pos = text.find(needle, pos + needle.size())) {
      ++count;
    }
    return count;
  }

  static void replace_once(std::string& s, const std::string& needle,
                           const std::string& value) {
    const std::size_t pos = s.find(needle);
    if (pos != std::string::npos) s.replace(pos, needle.size(), value);
  }
};

inline PromptTemplate load_template(const std::string& name, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open template file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  PromptTemplate tmpl{name, buf.str()};
  tmpl.validate();
  return tmpl;
}

/// Loads one of the shipped templates (tldr, helpfulness, helpfulness_short,
/// helpfulness_very_short, harmlessness) from a template directory.
inline PromptTemplate load_builtin_template(const std::string& name,
                                            const std::string& template_dir) {
  return load_template(name, template_dir + "/" + name + ".txt");
}

}  // namespace oaif
