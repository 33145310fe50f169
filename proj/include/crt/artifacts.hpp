#pragma once

// Text artifacts written by the command-line tool.
//
//   loss log:    step,loss,L_div,L_ms1,L_ms2,L_con   (one row per step)
//   embeddings:  label,e0,e1,...                     (one row per sample)

#include <string>
#include <vector>

#include "crt/tensor.hpp"
#include "crt/trainer.hpp"

namespace crt {

std::string loss_log_csv(const std::vector<StepRecord>& history);

struct EmbeddingDump {
  std::vector<int> labels;
  Tensor embeddings;  // [n, d]
};

std::string embeddings_csv(const Tensor& embeddings, const std::vector<int>& labels);
/// Parses `embeddings_csv` output. Errors name the offending line.
EmbeddingDump parse_embeddings_csv(const std::string& text, const std::string& source = "<embeddings>");
EmbeddingDump load_embeddings_csv(const std::string& path);

/// Retrieval, density and spectral reports for a dump, as key=value lines.
std::string analysis_report(const EmbeddingDump& dump, const std::vector<std::size_t>& ks);

void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

}  // namespace crt
