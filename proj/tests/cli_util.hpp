// Runs the command-line tool as a subprocess and captures its output.
#pragma once

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#ifndef TIMEMAE_CLI_PATH
#error "TIMEMAE_CLI_PATH must point at the timemae executable"
#endif

namespace cliutil {

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;

  /// stdout lines that parse as JSON objects.
  std::vector<nlohmann::json> records() const {
    std::vector<nlohmann::json> r;
    std::istringstream is(out);
    for (std::string line; std::getline(is, line);) {
      auto j = nlohmann::json::parse(line, nullptr, false);
      if (!j.is_discarded() && j.is_object()) r.push_back(std::move(j));
    }
    return r;
  }
  /// Last record of the given type, or null.
  nlohmann::json last(const std::string& type) const {
    nlohmann::json found;
    for (auto& j : records()) {
      if (j.value("type", "") == type) found = j;
    }
    return found;
  }
};

inline std::string quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) q += (c == '\'') ? std::string("'\\''") : std::string(1, c);
  return q + "'";
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

/// Runs `timemae args...` with stdout/stderr redirected into `scratch`,
/// optionally from inside `cwd` so relative paths resolve there.
inline RunResult run(const std::vector<std::string>& args, const std::filesystem::path& scratch,
                     const std::filesystem::path& cwd = {}) {
  std::string cmd = cwd.empty() ? "" : "cd " + quote(cwd.string()) + " && ";
  cmd += quote(TIMEMAE_CLI_PATH);
  for (const auto& a : args) cmd += " " + quote(a);
  const auto out = scratch / "stdout.txt", err = scratch / "stderr.txt";
  cmd += " >" + quote(out.string()) + " 2>" + quote(err.string());
  int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

}  // namespace cliutil
