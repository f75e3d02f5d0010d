// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <json.hpp>

#include "hld/data/dataset.hpp"

namespace hld::data {

// Unknown keys in from_json are rejected (InvalidConfig); missing keys keep
// their defaults.
void to_json(nlohmann::json& j, const GeneratorConfig& c);
void from_json(const nlohmann::json& j, GeneratorConfig& c);

void to_json(nlohmann::json& j, const Segment& s);
void from_json(const nlohmann::json& j, Segment& s);

}  // namespace hld::data
