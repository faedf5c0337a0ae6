#include "dyace/controller.hpp"

#include <fstream>
#include <sstream>

namespace dyace {

namespace {

const char* kTemplateNames[] = {
    "diagnosis_combine", "diagnosis_mutate", "diagnosis_explore",
    "coding_init",       "coding_combine",   "coding_mutate",
    "coding_explore",
};

} // namespace

PromptLibrary PromptLibrary::load(const std::string& dir) {
    PromptLibrary lib;
    for (const char* name : kTemplateNames) {
        const std::string path = dir + "/" + name + ".txt";
        std::ifstream in(path, std::ios::binary);
        if (!in) throw PromptError("cannot open prompt template '" + path + "'");
        std::ostringstream buf;
        buf << in.rdbuf();
        lib.templates_[name] = buf.str();
    }
    return lib;
}

const std::string& PromptLibrary::raw(const std::string& name) const {
    auto it = templates_.find(name);
    if (it == templates_.end()) throw PromptError("unknown prompt template '" + name + "'");
    return it->second;
}

std::string PromptLibrary::render(const std::string& name,
                                  const std::map<std::string, std::string>& subs) const {
    std::string text = raw(name);
    for (const auto& [key, value] : subs) {
        const std::string token = "{" + key + "}";
        std::size_t pos = 0;
        while ((pos = text.find(token, pos)) != std::string::npos) {
            text.replace(pos, token.size(), value);
            pos += value.size();
        }
    }
    return text;
}

std::uint64_t PromptLibrary::checksum(const std::string& text) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

} // namespace dyace
