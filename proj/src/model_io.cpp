#include "mmfn/model_io.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mmfn/error.hpp"

namespace mmfn {

namespace {

using nlohmann::json;

Mat read_matrix(const json& j, const char* key, int rows, int cols) {
  if (!j.contains(key)) throw ParseError(std::string("missing key '") + key + "'");
  const json& a = j.at(key);
  if (!a.is_array() || static_cast<int>(a.size()) != rows)
    throw ParseError(std::string("'") + key + "' must have " + std::to_string(rows) + " rows");
  Mat out(rows, cols);
  for (int r = 0; r < rows; ++r) {
    const json& row = a[r];
    if (!row.is_array() || static_cast<int>(row.size()) != cols)
      throw ParseError(std::string("row ") + std::to_string(r + 1) + " of '" + key + "' must have " +
                       std::to_string(cols) + " entries");
    for (int c = 0; c < cols; ++c) {
      if (!row[c].is_number())
        throw ParseError(std::string("non-numeric entry in '") + key + "'");
      out(r, c) = row[c].get<double>();
      if (!std::isfinite(out(r, c))) throw ParseError(std::string("non-finite entry in '") + key + "'");
    }
  }
  return out;
}

int read_dim(const json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_number_integer())
    throw ParseError(std::string("'") + key + "' must be an integer");
  long long v = j.at(key).get<long long>();
  if (v < 1 || v > 10'000) throw ParseError(std::string("'") + key + "' out of range");
  return static_cast<int>(v);
}

json matrix_json(const Mat& a) {
  json rows = json::array();
  for (int r = 0; r < a.rows(); ++r) {
    json row = json::array();
    for (int c = 0; c < a.cols(); ++c) row.push_back(a(r, c));
    rows.push_back(row);
  }
  return rows;
}

}  // namespace

MmfnModel parse_model(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("model must be a JSON object");
  MmfnModel md;
  md.d = read_dim(j, "d");
  md.m = read_dim(j, "m");
  md.lambda = read_matrix(j, "lambda", md.d, md.m);
  md.mu = read_matrix(j, "mu", md.d, md.m);
  md.P = read_matrix(j, "P", md.d, md.d);
  md.Q = read_matrix(j, "Q", md.m, md.m);
  if ((md.lambda.array() < 0.0).any()) throw ParseError("negative exogenous rate in 'lambda'");
  if ((md.mu.array() < 0.0).any()) throw ParseError("negative release rate in 'mu'");
  return md;
}

MmfnModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open model file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_model(ss.str());
}

std::string model_to_json(const MmfnModel& model) {
  nlohmann::ordered_json j;
  j["d"] = model.d;
  j["m"] = model.m;
  j["lambda"] = matrix_json(model.lambda);
  j["mu"] = matrix_json(model.mu);
  j["P"] = matrix_json(model.P);
  j["Q"] = matrix_json(model.Q);
  return j.dump(2) + "\n";
}

}  // namespace mmfn
