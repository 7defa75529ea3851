#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "ditto/common.hpp"

namespace ditto {

// Renders a template with Python str.format semantics: "{name}" substitutes
// the bound value, "{{" and "}}" escape to literal braces. An unknown or
// unbound slot is an error naming the slot.
inline std::string render_format(std::string_view tmpl,
                                 const std::map<std::string, std::string>& slots) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    char c = tmpl[i];
    if (c == '{') {
      if (i + 1 < tmpl.size() && tmpl[i + 1] == '{') {
        out.push_back('{');
        i += 2;
        continue;
      }
      std::size_t close = tmpl.find('}', i + 1);
      if (close == std::string_view::npos)
        throw ParseError("unterminated '{' in template at offset " + std::to_string(i));
      std::string name(tmpl.substr(i + 1, close - i - 1));
      auto it = slots.find(name);
      if (it == slots.end()) throw PreconditionError("template slot not bound: '" + name + "'");
      out += it->second;
      i = close + 1;
    } else if (c == '}') {
      if (i + 1 < tmpl.size() && tmpl[i + 1] == '}') {
        out.push_back('}');
        i += 2;
        continue;
      }
      throw ParseError("stray '}' in template at offset " + std::to_string(i));
    } else {
      out.push_back(c);
      ++i;
    }
  }
  return out;
}

// Template files are stored with a trailing newline for the editors' sake;
// the prompt itself ends at the last content byte.
inline std::string load_template_file(const std::filesystem::path& path) {
  std::string text = read_file(path);
  if (!text.empty() && text.back() == '\n') text.pop_back();
  return text;
}

// The prompt set for dialogue simulation. One file per (purpose, language);
// the no-knowledge variants back the knowledge-injection ablation.
class TemplateSet {
public:
  static TemplateSet load(const std::filesystem::path& dir) {
    TemplateSet t;
    t.dir_ = dir;
    for (Language lang : {Language::en, Language::zh}) {
      const std::string suffix = "_" + to_string(lang) + ".txt";
      t.query_sim_[lang] = load_template_file(dir / ("query_sim" + suffix));
      t.response_sim_[lang] = load_template_file(dir / ("response_sim" + suffix));
      t.response_sim_noknow_[lang] = load_template_file(dir / ("response_sim_noknow" + suffix));
      t.brief_intro_[lang] = load_template_file(dir / ("brief_intro" + suffix));
    }
    return t;
  }

  const std::string& query_sim(Language l) const { return query_sim_.at(l); }
  const std::string& response_sim(Language l, bool with_knowledge) const {
    return with_knowledge ? response_sim_.at(l) : response_sim_noknow_.at(l);
  }
  const std::string& brief_intro(Language l) const { return brief_intro_.at(l); }
  const std::filesystem::path& dir() const { return dir_; }

private:
  std::filesystem::path dir_;
  std::map<Language, std::string> query_sim_;
  std::map<Language, std::string> response_sim_;
  std::map<Language, std::string> response_sim_noknow_;
  std::map<Language, std::string> brief_intro_;
};

// The three judge prompts. Their bytes (plus the version file) feed the
// judge config hash so verdicts from different prompt revisions never mix.
class JudgeTemplates {
public:
  static JudgeTemplates load(const std::filesystem::path& dir) {
    JudgeTemplates t;
    t.consistency_ = load_template_file(dir / "consistency.txt");
    t.knowledge_ = load_template_file(dir / "knowledge.txt");
    t.rejection_ = load_template_file(dir / "rejection.txt");
    t.version_ = trim(read_file(dir / "VERSION"));
    return t;
  }

  const std::string& consistency() const { return consistency_; }
  const std::string& knowledge() const { return knowledge_; }
  const std::string& rejection() const { return rejection_; }
  const std::string& version() const { return version_; }

  std::string content_hash() const {
    return sha256_hex(version_ + "\x1f" + consistency_ + "\x1f" + knowledge_ + "\x1f" +
                      rejection_);
  }

private:
  std::string consistency_, knowledge_, rejection_, version_;
};

}  // namespace ditto
