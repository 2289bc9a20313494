#include "genotype.hpp"

#include <sstream>

#include <json.hpp>

namespace add {

namespace {

using nlohmann::json;

json side_to_json(const std::vector<std::array<GenotypeEdge, 2>>& side) {
  json out = json::array();
  for (const auto& pair : side) {
    json p = json::array();
    for (const GenotypeEdge& e : pair)
      p.push_back({{"input", e.input}, {"op", std::string(op_kind_name(e.op))}});
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<std::array<GenotypeEdge, 2>> side_from_json(const json& j, const char* name) {
  ADD_CHECK(j.is_array(), ErrorCode::Format, "genotype \"%s\" must be an array", name);
  std::vector<std::array<GenotypeEdge, 2>> side;
  for (const json& p : j) {
    ADD_CHECK(p.is_array() && p.size() == 2, ErrorCode::Format,
              "genotype \"%s\" entries must be pairs of edges", name);
    std::array<GenotypeEdge, 2> pair;
    for (int k = 0; k < 2; ++k) {
      const json& e = p[static_cast<size_t>(k)];
      ADD_CHECK(e.is_object() && e.contains("input") && e.contains("op"), ErrorCode::Format,
                "genotype edge needs \"input\" and \"op\" fields");
      ADD_CHECK(e["input"].is_number_integer(), ErrorCode::Format,
                "genotype edge \"input\" must be an integer");
      ADD_CHECK(e["op"].is_string(), ErrorCode::Format, "genotype edge \"op\" must be a string");
      pair[static_cast<size_t>(k)] = {e["input"].get<int>(),
                                      op_kind_from_name(e["op"].get<std::string>())};
    }
    side.push_back(pair);
  }
  return side;
}

void validate_side(const std::vector<std::array<GenotypeEdge, 2>>& side, int blocks,
                   const char* name) {
  ADD_CHECK(static_cast<int>(side.size()) == blocks, ErrorCode::Format,
            "genotype \"%s\" has %zu blocks, header says %d", name, side.size(), blocks);
  for (int i = 0; i < blocks; ++i) {
    for (const GenotypeEdge& e : side[static_cast<size_t>(i)]) {
      ADD_CHECK(e.input >= 0 && e.input < i + 2, ErrorCode::Format,
                "genotype \"%s\" block %d: input %d out of range [0,%d)", name, i, e.input, i + 2);
      ADD_CHECK(e.op != OpKind::Zero, ErrorCode::Format,
                "genotype \"%s\" block %d selects the zero op", name, i);
    }
  }
}

void side_to_dot(std::ostringstream& out, const std::vector<std::array<GenotypeEdge, 2>>& side,
                 const char* name) {
  out << "  subgraph cluster_" << name << " {\n";
  out << "    label=\"" << name << " cell\";\n";
  out << "    " << name << "_in0 [label=\"in0\", shape=box];\n";
  out << "    " << name << "_in1 [label=\"in1\", shape=box];\n";
  for (size_t i = 0; i < side.size(); ++i)
    out << "    " << name << "_b" << i << " [label=\"block " << i << "\"];\n";
  auto node = [&](int input) {
    std::ostringstream s;
    if (input < 2)
      s << name << "_in" << input;
    else
      s << name << "_b" << (input - 2);
    return s.str();
  };
  for (size_t i = 0; i < side.size(); ++i)
    for (const GenotypeEdge& e : side[i])
      out << "    " << node(e.input) << " -> " << name << "_b" << i << " [label=\""
          << op_kind_name(e.op) << "\"];\n";
  out << "  }\n";
}

}  // namespace

void validate_genotype(const Genotype& g) {
  ADD_CHECK(g.blocks >= 1, ErrorCode::Format, "genotype needs at least one block, got %d",
            g.blocks);
  validate_side(g.normal, g.blocks, "normal");
  validate_side(g.reduce, g.blocks, "reduce");
}

std::string genotype_to_json(const Genotype& g) {
  validate_genotype(g);
  json j;
  j["blocks"] = g.blocks;
  j["normal"] = side_to_json(g.normal);
  j["reduce"] = side_to_json(g.reduce);
  return j.dump(2) + "\n";
}

Genotype genotype_from_json(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  ADD_CHECK(!j.is_discarded(), ErrorCode::Format, "genotype is not valid JSON");
  ADD_CHECK(j.is_object() && j.contains("blocks") && j.contains("normal") && j.contains("reduce"),
            ErrorCode::Format, "genotype needs \"blocks\", \"normal\", and \"reduce\" fields");
  ADD_CHECK(j["blocks"].is_number_integer(), ErrorCode::Format,
            "genotype \"blocks\" must be an integer");
  Genotype g;
  g.blocks = j["blocks"].get<int>();
  g.normal = side_from_json(j["normal"], "normal");
  g.reduce = side_from_json(j["reduce"], "reduce");
  validate_genotype(g);
  return g;
}

std::string genotype_to_dot(const Genotype& g) {
  validate_genotype(g);
  std::ostringstream out;
  out << "digraph cells {\n";
  out << "  rankdir=LR;\n";
  side_to_dot(out, g.normal, "normal");
  side_to_dot(out, g.reduce, "reduce");
  out << "}\n";
  return out.str();
}

}  // namespace add
