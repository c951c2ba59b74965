/*
 * Copyright 2026 The coca-desk Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include "coca/report.hpp"

#include "coca/checkpoint.hpp"

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>

namespace coca {

namespace {

void check_field(const std::string& s, const char* what) {
  if (s.empty() || s.find_first_of("\t\n\r") != std::string::npos) {
    throw Error(std::string("report ") + what + " must be non-empty and free of tabs and newlines: '" + s + "'");
  }
}

}  // namespace

void EvalReport::add_provenance(const std::string& key, const std::string& value) {
  check_field(key, "key");
  if (key.find('=') != std::string::npos) throw Error("report key cannot contain '=': " + key);
  if (value.find_first_of("\n\r") != std::string::npos) throw Error("report value cannot span lines");
  provenance.emplace_back(key, value);
}

void EvalReport::add_metric(const std::string& name, double value) {
  check_field(name, "metric");
  if (name[0] == '#') throw Error("metric names cannot start with '#'");
  metrics.emplace_back(name, value);
}

double EvalReport::metric(const std::string& name) const {
  for (const auto& [n, v] : metrics) {
    if (n == name) return v;
  }
  throw Error("report has no metric " + name);
}

const std::string& EvalReport::provenance_value(const std::string& key) const {
  for (const auto& [k, v] : provenance) {
    if (k == key) return v;
  }
  throw Error("report has no provenance key " + key);
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double(const std::string& text) {
  if (text.empty()) throw IoError("empty number");
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (end != text.c_str() + text.size() || (errno == ERANGE && std::isinf(v))) throw IoError("bad number '" + text + "'");
  return v;
}

std::string format_report(const EvalReport& report) {
  std::string out;
  for (const auto& [k, v] : report.provenance) out += "#" + k + "=" + v + "\n";
  for (const auto& [n, v] : report.metrics) out += n + "\t" + format_double(v) + "\n";
  return out;
}

EvalReport parse_report(const std::string& text) {
  EvalReport r;
  std::istringstream in(text);
  std::string line;
  bool in_metrics = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (in_metrics) throw IoError("report: provenance line after metrics");
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw IoError("report: provenance line without '=': " + line);
      r.provenance.emplace_back(line.substr(1, eq - 1), line.substr(eq + 1));
      continue;
    }
    in_metrics = true;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos) {
      throw IoError("report: expected 'metric<TAB>value': " + line);
    }
    r.metrics.emplace_back(line.substr(0, tab), parse_double(line.substr(tab + 1)));
  }
  return r;
}

void save_report(const std::string& path, const EvalReport& report) { write_file(path, format_report(report)); }

EvalReport load_report(const std::string& path) { return parse_report(read_file(path)); }

}  // namespace coca
