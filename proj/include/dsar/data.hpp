#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <string>

#include "dsar/network.hpp"

namespace dsar {

/// A network with one response and p covariates per node.
struct Dataset {
  SparseNetwork network;
  Eigen::VectorXd y;
  Eigen::MatrixXd x;
  NodeIndex index;  ///< original node labels; identity for synthetic data

  Index n_nodes() const { return network.n_nodes(); }
  Index p() const { return x.cols(); }
};

/// Node data CSV: header "id,y,x1,...,xp", one row per node, values written
/// with round-trip precision.
void write_node_csv(std::ostream& out, const Dataset& data);

/// Writes "<prefix>.edges" and "<prefix>.csv".
void save_dataset(const std::string& prefix, const Dataset& data);

struct CsvOptions {
  std::string id_column = "id";
  std::string response_column = "y";
};

/// Joins a node CSV with an already-read edge list. Every CSV id must be in
/// the edge list and every node needs exactly one CSV row. Columns other
/// than id and the response become covariates, in file order.
Dataset read_node_csv(std::istream& in, EdgeListData graph,
                      const CsvOptions& opts = {});

Dataset load_dataset(const std::string& edge_path, const std::string& csv_path,
                     const CsvOptions& opts = {});

/// Centers and scales y and every column of X to unit sample variance.
/// Constant columns are centered only.
void standardize(Dataset& data);

}  // namespace dsar
