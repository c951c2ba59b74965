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
#pragma once

#include "coca/config.hpp"

#include <string>
#include <utility>
#include <vector>

namespace coca {

// Line-based metric report: `#key=value` provenance lines, then one
// `metric<TAB>value` line per metric. Values print with 17 significant digits
// so a reload reproduces every double exactly.
struct EvalReport {
  std::vector<KeyValue> provenance;
  std::vector<std::pair<std::string, double>> metrics;

  void add_provenance(const std::string& key, const std::string& value);
  void add_metric(const std::string& name, double value);
  // Throws Error when absent.
  double metric(const std::string& name) const;
  const std::string& provenance_value(const std::string& key) const;
};

std::string format_report(const EvalReport& report);
EvalReport parse_report(const std::string& text);
void save_report(const std::string& path, const EvalReport& report);
EvalReport load_report(const std::string& path);

// Shortest round-trip-safe text for a double.
std::string format_double(double v);
// Strict parse of a whole field; IoError otherwise.
double parse_double(const std::string& text);

}  // namespace coca
