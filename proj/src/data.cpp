#include "dsar/data.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <vector>

#include "dsar/errors.hpp"

namespace dsar {

namespace {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  for (auto& f : fields) {
    const auto b = f.find_first_not_of(" \t");
    const auto e = f.find_last_not_of(" \t");
    f = b == std::string::npos ? std::string() : f.substr(b, e - b + 1);
    if (f.size() >= 2 && f.front() == '"' && f.back() == '"') f = f.substr(1, f.size() - 2);
  }
  return fields;
}

double parse_double(const std::string& s, std::size_t line, const std::string& column) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v))
    throw IoError("line " + std::to_string(line) + ", column '" + column +
                  "': non-numeric value '" + s + "'");
  return v;
}

}  // namespace

void write_node_csv(std::ostream& out, const Dataset& data) {
  out << "id,y";
  for (Index j = 0; j < data.p(); ++j) out << ",x" << (j + 1);
  out << '\n';
  for (Index i = 0; i < data.n_nodes(); ++i) {
    out << (data.index.labels.empty() ? std::to_string(i)
                                      : data.index.labels[static_cast<std::size_t>(i)]);
    out << ',' << format_double(data.y[i]);
    for (Index j = 0; j < data.p(); ++j) out << ',' << format_double(data.x(i, j));
    out << '\n';
  }
}

void save_dataset(const std::string& prefix, const Dataset& data) {
  std::ofstream edges(prefix + ".edges");
  std::ofstream csv(prefix + ".csv");
  if (!edges || !csv) throw IoError("cannot write dataset files with prefix '" + prefix + "'");
  write_edge_list(edges, data.network, data.index.labels.empty() ? nullptr : &data.index);
  write_node_csv(csv, data);
}

Dataset read_node_csv(std::istream& in, EdgeListData graph, const CsvOptions& opts) {
  std::string line;
  if (!std::getline(in, line)) throw IoError("node CSV is empty");
  const auto header = split_csv(line);
  std::ptrdiff_t id_col = -1, y_col = -1;
  std::vector<std::size_t> x_cols;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c] == opts.id_column)
      id_col = static_cast<std::ptrdiff_t>(c);
    else if (header[c] == opts.response_column)
      y_col = static_cast<std::ptrdiff_t>(c);
    else
      x_cols.push_back(c);
  }
  if (id_col < 0) throw IoError("node CSV has no '" + opts.id_column + "' column");
  if (y_col < 0) throw IoError("node CSV has no '" + opts.response_column + "' column");
  if (x_cols.empty()) throw IoError("node CSV has no covariate columns");

  const Index n = graph.network.n_nodes();
  Dataset data;
  data.y = Eigen::VectorXd::Zero(n);
  data.x = Eigen::MatrixXd::Zero(n, static_cast<Index>(x_cols.size()));
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto f = split_csv(line);
    if (f.size() != header.size())
      throw IoError("line " + std::to_string(line_no) + ": expected " +
                    std::to_string(header.size()) + " fields, found " +
                    std::to_string(f.size()));
    const NodeId i = graph.index.find(f[static_cast<std::size_t>(id_col)]);
    if (i < 0)
      throw IoError("line " + std::to_string(line_no) + ": unknown node id '" +
                    f[static_cast<std::size_t>(id_col)] + "' (not in the edge list)");
    if (seen[static_cast<std::size_t>(i)])
      throw IoError("line " + std::to_string(line_no) + ": duplicate node id '" +
                    f[static_cast<std::size_t>(id_col)] + "'");
    seen[static_cast<std::size_t>(i)] = 1;
    data.y[i] = parse_double(f[static_cast<std::size_t>(y_col)], line_no, opts.response_column);
    for (std::size_t c = 0; c < x_cols.size(); ++c)
      data.x(i, static_cast<Index>(c)) = parse_double(f[x_cols[c]], line_no, header[x_cols[c]]);
  }
  for (Index i = 0; i < n; ++i)
    if (!seen[static_cast<std::size_t>(i)])
      throw IoError("node '" + graph.index.labels[static_cast<std::size_t>(i)] +
                    "' appears in the edge list but has no CSV row");
  data.network = std::move(graph.network);
  data.index = std::move(graph.index);
  return data;
}

Dataset load_dataset(const std::string& edge_path, const std::string& csv_path,
                     const CsvOptions& opts) {
  auto graph = read_edge_list_file(edge_path);
  std::ifstream in(csv_path);
  if (!in) throw IoError("cannot open node CSV '" + csv_path + "'");
  return read_node_csv(in, std::move(graph), opts);
}

void standardize(Dataset& data) {
  auto scale = [](auto col) {
    const double n = static_cast<double>(col.size());
    const double mean = col.mean();
    col.array() -= mean;
    if (col.size() < 2) return;
    const double sd = std::sqrt(col.squaredNorm() / (n - 1.0));
    if (sd > 0.0) col /= sd;
  };
  scale(data.y.col(0));
  for (Index j = 0; j < data.p(); ++j) scale(data.x.col(j));
}

}  // namespace dsar
