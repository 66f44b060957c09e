#include "liitr/io.hpp"

#include <openssl/evp.h>

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace liitr {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string dataset_to_csv(const Dataset& data) {
  data.validate();
  std::string out;
  for (std::size_t c = 0; c < data.p(); ++c) out += "x" + std::to_string(c + 1) + ",";
  out += "t,y\n";
  for (std::size_t i = 0; i < data.n(); ++i) {
    for (std::size_t c = 0; c < data.p(); ++c) out += format_double(data.x(i, c)) + ",";
    out += std::to_string(data.t[i]) + "," + format_double(data.y[i]) + "\n";
  }
  return out;
}

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

double parse_double(const std::string& s, std::size_t line) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end)
    throw ShapeError("dataset line " + std::to_string(line) + ": bad number '" + s + "'");
  return v;
}

}  // namespace

Dataset dataset_from_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line)) throw ShapeError("dataset CSV is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split(line, ',');
  if (header.size() < 3 || header[header.size() - 2] != "t" || header.back() != "y")
    throw ShapeError("dataset header must be x1..xp,t,y");
  const std::size_t p = header.size() - 2;
  for (std::size_t c = 0; c < p; ++c)
    if (header[c] != "x" + std::to_string(c + 1))
      throw ShapeError("dataset header column " + std::to_string(c + 1) + " must be x" +
                       std::to_string(c + 1));
  std::vector<Vector> rows;
  Dataset d;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != p + 2)
      throw ShapeError("dataset line " + std::to_string(lineno) + " has " +
                       std::to_string(f.size()) + " fields, expected " + std::to_string(p + 2));
    Vector row(p);
    for (std::size_t c = 0; c < p; ++c) row[c] = parse_double(f[c], lineno);
    rows.push_back(std::move(row));
    const double t = parse_double(f[p], lineno);
    if (t != 0.0 && t != 1.0)
      throw ShapeError("dataset line " + std::to_string(lineno) + ": t must be 0 or 1");
    d.t.push_back(static_cast<int>(t));
    d.y.push_back(parse_double(f[p + 1], lineno));
  }
  if (rows.empty()) throw ShapeError("dataset CSV has no data rows");
  d.x = Matrix::from_rows(rows);
  d.columns.assign(header.begin(), header.begin() + static_cast<std::ptrdiff_t>(p));
  d.validate();
  return d;
}

json truth_to_json(const GroundTruth& truth, std::uint64_t seed, const json& config,
                   std::size_t n_train) {
  std::vector<int> region;
  for (int r : truth.region) region.push_back(r + 1);
  json b2 = json::array();
  for (const auto& b : truth.beta_k2) b2.push_back(b);
  return json{{"region", region},
              {"optimal_t", truth.optimal_t},
              {"beta1", truth.beta1},
              {"beta_k2", b2},
              {"medians", {{"x1", truth.x1_med}, {"x2", truth.x2_med}}},
              {"misspecified", truth.misspecified},
              {"quad_coef", truth.quad_coef},
              {"n_train", n_train},
              {"seed", seed},
              {"config", config}};
}

GroundTruth truth_from_json(const json& j) {
  GroundTruth g;
  for (int r : j.at("region").get<std::vector<int>>()) {
    if (r < 1 || r > 4) throw ShapeError("truth region labels must be 1..4");
    g.region.push_back(r - 1);
  }
  g.optimal_t = j.at("optimal_t").get<std::vector<int>>();
  g.beta1 = j.at("beta1").get<std::array<double, 4>>();
  const auto& b2 = j.at("beta_k2");
  if (b2.size() != 4) throw ShapeError("truth beta_k2 must have 4 regions");
  for (std::size_t r = 0; r < 4; ++r) g.beta_k2[r] = b2[r].get<std::array<double, 3>>();
  g.x1_med = j.at("medians").at("x1").get<double>();
  g.x2_med = j.at("medians").at("x2").get<double>();
  g.misspecified = j.value("misspecified", false);
  g.quad_coef = j.value("quad_coef", 0.0);
  return g;
}

std::string explanations_to_jsonl(std::span<const Explanation> explanations) {
  std::string out;
  for (const auto& e : explanations) out += dump_json(explanation_to_json(e)) + "\n";
  return out;
}

std::vector<Explanation> explanations_from_jsonl(const std::string& text) {
  std::vector<Explanation> out;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line))
    if (!line.empty()) out.push_back(explanation_from_json(json::parse(line)));
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << contents;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

json read_json_file(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ShapeError(path.string() + ": " + e.what());
  }
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("SHA-256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xf];
  }
  return out;
}

}  // namespace liitr
