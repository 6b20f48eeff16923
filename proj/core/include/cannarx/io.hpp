#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace cannarx {

// Numeric CSV with a one-line header. Values are written with %.17g so a
// write/read round trip is exact and reruns are byte-identical.
struct CsvTable {
  std::vector<std::string> columns;
  Eigen::MatrixXd data;  // rows x columns

  int col(const std::string& name) const;  // throws ValidationError if absent
};

void write_csv(const std::filesystem::path& path, const CsvTable& table);
CsvTable read_csv(const std::filesystem::path& path);

std::string format_double(double v);  // %.17g

void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

// Row-major matrix <-> JSON {"rows", "cols", "data"}.
nlohmann::json matrix_to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const nlohmann::json& j);

// FNV-1a 64-bit over raw file bytes, as a hex string. Used for the
// pipeline's content-addressed artifact index.
std::uint64_t fnv1a64(const void* data, std::size_t size);
std::string file_content_hash(const std::filesystem::path& path);

}  // namespace cannarx
