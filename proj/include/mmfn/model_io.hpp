#pragma once

#include <string>

#include "mmfn/model.hpp"

namespace mmfn {

// Parses the JSON model format (keys d, m, lambda, mu, P, Q; rows of
// decimal numbers). Throws ParseError on malformed input, wrong shapes or
// negative rates.
MmfnModel parse_model(const std::string& text);
MmfnModel load_model(const std::string& path);
std::string model_to_json(const MmfnModel& model);

}  // namespace mmfn
