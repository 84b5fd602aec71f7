#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "intervalic/codec.hpp"
#include "intervalic/common.hpp"
#include "intervalic/midi.hpp"

namespace py = pybind11;

namespace {

using intervalic::codec::Bits;
using intervalic::codec::CodecConfig;

intervalic::midi::PitchGrid grid_from_rows(const std::vector<std::vector<int>>& rows) {
  intervalic::midi::PitchGrid grid;
  grid.steps.reserve(rows.size());
  for (const std::vector<int>& row : rows) grid.steps.emplace_back(row.begin(), row.end());
  return grid;
}

std::vector<std::vector<int>> rows_from_grid(const intervalic::midi::PitchGrid& grid) {
  std::vector<std::vector<int>> rows;
  rows.reserve(grid.steps.size());
  for (const intervalic::midi::PitchSet& step : grid.steps) rows.emplace_back(step.begin(), step.end());
  return rows;
}

CodecConfig make_config(int max_space, int melody_span) {
  CodecConfig config;
  config.max_space = max_space;
  config.melody_span = melody_span;
  return config;
}

}  // namespace

PYBIND11_MODULE(_intervalic, m) {
  m.doc() = "core operations of the interval-encoded chorale toolkit";

  py::register_exception<intervalic::Error>(m, "Error");

  m.def("fold_interval", &intervalic::codec::fold_interval, py::arg("interval"),
        "Fold a melodic interval into [-11, 11] with sign-preserving mod 12.");

  m.def(
      "melody_intervals",
      [](const std::vector<int>& sopranos) { return intervalic::codec::melody_intervals(sopranos); },
      py::arg("sopranos"), "Successive differences of a soprano line, one per motion.");

  m.def(
      "midi_to_grid",
      [](const py::bytes& data) {
        std::string buffer = data;
        std::span<const uint8_t> bytes(reinterpret_cast<const uint8_t*>(buffer.data()), buffer.size());
        intervalic::midi::MidiPiece piece = intervalic::midi::parse_midi(bytes);
        int64_t quantum = std::max<int64_t>(1, piece.ticks_per_quarter / 2);
        int64_t offset = intervalic::midi::estimate_offset(piece, quantum);
        return rows_from_grid(
            intervalic::midi::strip_silence(intervalic::midi::quantize(piece, offset)));
      },
      py::arg("data"),
      "Parse SMF bytes and return the eighth-note pitch grid with silence removed.");

  m.def(
      "grid_to_midi",
      [](const std::vector<std::vector<int>>& grid, int ticks_per_quarter) {
        std::vector<uint8_t> bytes =
            intervalic::midi::write_midi(intervalic::midi::grid_to_piece(grid_from_rows(grid), ticks_per_quarter));
        return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
      },
      py::arg("grid"), py::arg("ticks_per_quarter") = 480,
      "Render a pitch grid as SMF bytes, one eighth note per step with repeats merged.");

  m.def(
      "encode_grid",
      [](const std::vector<std::vector<int>>& grid, int max_space, int melody_span) {
        intervalic::codec::EncodedPiece enc =
            intervalic::codec::encode_piece(grid_from_rows(grid), make_config(max_space, melody_span));
        std::vector<std::vector<int>> rows;
        rows.reserve(enc.steps.size());
        for (const intervalic::codec::TimestepVector& step : enc.steps) {
          Bits flat = step.flatten();
          rows.emplace_back(flat.begin(), flat.end());
        }
        return rows;
      },
      py::arg("grid"), py::arg("max_space") = 64, py::arg("melody_span") = 11,
      "Encode a pitch grid into interval vectors, one flattened 0/1 row per timestep.");

  m.def(
      "decode_grid",
      [](const std::vector<std::vector<int>>& steps, int opening, int max_space, int melody_span) {
        CodecConfig config = make_config(max_space, melody_span);
        intervalic::codec::EncodedPiece enc;
        enc.config = config;
        enc.steps.reserve(steps.size());
        for (const std::vector<int>& row : steps) {
          Bits flat;
          flat.reserve(row.size());
          for (int bit : row) flat.push_back(bit != 0 ? 1 : 0);
          enc.steps.push_back(intervalic::codec::unflatten(flat, config));
        }
        return rows_from_grid(intervalic::codec::decode_piece(enc, opening).grid);
      },
      py::arg("steps"), py::arg("opening"), py::arg("max_space") = 64, py::arg("melody_span") = 11,
      "Decode flattened interval vectors back into a pitch grid from an opening soprano pitch.");
}
