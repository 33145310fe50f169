#include "crt/artifacts.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "crt/errors.hpp"
#include "crt/metrics.hpp"

namespace crt {

std::string loss_log_csv(const std::vector<StepRecord>& history) {
  std::string out = "step,loss,L_div,L_ms1,L_ms2,L_con\n";
  for (const StepRecord& r : history) {
    out += std::to_string(r.step) + ',' + format_double(r.total) + ',' + format_double(r.diversity) + ',' +
           format_double(r.ms1) + ',' + format_double(r.ms2) + ',' + format_double(r.consistency) + '\n';
  }
  return out;
}

std::string embeddings_csv(const Tensor& embeddings, const std::vector<int>& labels) {
  if (embeddings.rank() != 2 || embeddings.dim(0) != labels.size()) {
    throw ShapeError("embeddings_csv: need [n, d] embeddings and n labels");
  }
  const std::size_t n = embeddings.dim(0), d = embeddings.dim(1);
  std::string out = "label";
  for (std::size_t c = 0; c < d; ++c) out += ",e" + std::to_string(c);
  out += '\n';
  for (std::size_t i = 0; i < n; ++i) {
    out += std::to_string(labels[i]);
    for (std::size_t c = 0; c < d; ++c) out += ',' + format_double(embeddings[i * d + c]);
    out += '\n';
  }
  return out;
}

namespace {

template <typename T>
T parse_field(const std::string& field, const std::string& where) {
  T v{};
  const char* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, v);
  if (ec != std::errc() || ptr != end) throw IoError(where + ": bad number '" + field + "'");
  return v;
}

}  // namespace

EmbeddingDump parse_embeddings_csv(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0, dim = 0;
  EmbeddingDump dump;
  std::vector<double> values;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (lineno == 1 && line.rfind("label", 0) == 0) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    std::istringstream row(line);
    std::string field;
    std::getline(row, field, ',');
    dump.labels.push_back(parse_field<int>(field, where));
    std::size_t count = 0;
    while (std::getline(row, field, ',')) {
      values.push_back(parse_field<double>(field, where));
      ++count;
    }
    if (count == 0) throw IoError(where + ": row has no embedding values");
    if (dim == 0) dim = count;
    if (count != dim) {
      throw IoError(where + ": expected " + std::to_string(dim) + " values, got " + std::to_string(count));
    }
  }
  if (dump.labels.empty()) throw IoError(source + ": no embeddings");
  dump.embeddings = Tensor({dump.labels.size(), dim}, std::move(values));
  return dump;
}

EmbeddingDump load_embeddings_csv(const std::string& path) {
  return parse_embeddings_csv(read_text_file(path), path);
}

std::string analysis_report(const EmbeddingDump& dump, const std::vector<std::size_t>& ks) {
  const Tensor e = normalize_rows(dump.embeddings);
  std::string out = "samples=" + std::to_string(dump.labels.size()) + "\n";
  out += "dim=" + std::to_string(e.dim(1)) + "\n";
  out += to_key_values(recall_at_k(e, dump.labels, ks), "");
  out += to_key_values(embedding_space_density(e, dump.labels), "");
  out += to_key_values(spectral_decay(e), "");
  return out;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("failed writing " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace crt
