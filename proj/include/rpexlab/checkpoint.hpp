#pragma once

// Named parameter records in a flat binary file.
//
// Layout (all integers unsigned 64-bit little-endian, floats IEEE-754
// binary64 little-endian):
//   magic    8 bytes "RPEXLAB1"
//   count    number of records
//   record*  kind (1 byte: 0 = network, 1 = vector), name length, name bytes,
//            then for a network: width count, widths, parameters in
//            Mlp::flat_params order; for a vector: length, values.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "rpexlab/neural.hpp"

namespace rpexlab {

class CheckpointError : public std::runtime_error {
 public:
  explicit CheckpointError(const std::string& what) : std::runtime_error(what) {}
};

class Checkpoint {
 public:
  void put_mlp(const std::string& name, const Mlp& net);
  void put_vector(const std::string& name, std::span<const double> values);
  void put_vector(const std::string& name, const Vec& values);

  bool has(const std::string& name) const { return records_.count(name) != 0; }
  Mlp get_mlp(const std::string& name) const;
  std::vector<double> get_vector(const std::string& name) const;
  Vec get_vec(const std::string& name) const;

  std::vector<std::string> names() const;

  std::string serialize() const;
  static Checkpoint deserialize(const std::string& bytes);
  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

  bool operator==(const Checkpoint& other) const = default;

 private:
  struct Record {
    bool is_mlp = false;
    std::vector<int> widths;
    std::vector<double> values;
    bool operator==(const Record& other) const = default;
  };
  const Record& find(const std::string& name, bool want_mlp) const;

  // Kept sorted so files are independent of insertion order.
  std::map<std::string, Record> records_;
};

}  // namespace rpexlab
