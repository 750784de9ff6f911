// Copyright 2026 The ddbh Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef DDBH_MODEL_HPP
#define DDBH_MODEL_HPP

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ddbh/errors.hpp"
#include "ddbh/fock_ops.hpp"
#include "ddbh/types.hpp"

namespace ddbh {

// Largest chain Hilbert dimension the dense/exact routines will build
// (Liouville dimension at most 10^6).
inline constexpr std::int64_t kDefaultMaxHilbertDim = 1000;

// Driven-dissipative Bose-Hubbard chain in the frame rotating at the drive
// frequency. Energies are in units of the loss rate; detuning[l] is the site
// frequency minus the drive frequency.
struct ModelParams {
  int n_sites = 1;
  std::vector<double> detuning;     // n_sites
  std::vector<double> hopping;      // n_sites - 1, bond (l, l+1)
  std::vector<double> interaction;  // n_sites
  double drive = 0.0;
  double dissipation = 1.0;
  int local_dim = 5;

  void validate() const {
    if (n_sites < 1) throw ArgumentError("n_sites must be >= 1");
    if (local_dim < 2) throw InvalidDimension("local_dim must be >= 2");
    const auto n = static_cast<std::size_t>(n_sites);
    if (detuning.size() != n) throw ArgumentError("detuning needs n_sites entries");
    if (interaction.size() != n) {
      throw ArgumentError("interaction needs n_sites entries");
    }
    if (hopping.size() != n - 1) {
      throw ArgumentError("hopping needs n_sites - 1 entries");
    }
    if (!(dissipation > 0.0)) throw ArgumentError("dissipation must be > 0");
  }

  bool operator==(const ModelParams&) const = default;
};

// Uniform chain with every site and bond sharing one value.
inline ModelParams uniform_chain(int n_sites, double hopping, double interaction,
                                 double detuning, double drive, int local_dim,
                                 double dissipation = 1.0) {
  ModelParams p;
  p.n_sites = n_sites;
  p.detuning.assign(n_sites, detuning);
  p.interaction.assign(n_sites, interaction);
  p.hopping.assign(n_sites > 0 ? n_sites - 1 : 0, hopping);
  p.drive = drive;
  p.dissipation = dissipation;
  p.local_dim = local_dim;
  p.validate();
  return p;
}

enum class FlipMode {
  FullNegation,      // H -> -H: detuning, hopping, interaction and drive
  NumberConserving,  // detuning, hopping and interaction
  PartialUDelta,     // detuning and interaction; hopping kept
};

inline ModelParams apply_flip(ModelParams p, FlipMode mode) {
  // Zero entries stay +0.0.
  auto negate = [](std::vector<double>& v) {
    for (double& x : v) x = (x == 0.0) ? 0.0 : -x;
  };
  negate(p.detuning);
  negate(p.interaction);
  if (mode != FlipMode::PartialUDelta) negate(p.hopping);
  if (mode == FlipMode::FullNegation && p.drive != 0.0) p.drive = -p.drive;
  return p;
}

inline std::string_view to_string(FlipMode mode) {
  switch (mode) {
    case FlipMode::FullNegation:
      return "full_negation";
    case FlipMode::NumberConserving:
      return "number_conserving";
    case FlipMode::PartialUDelta:
      return "partial_u_delta";
  }
  return "?";
}

inline std::optional<FlipMode> parse_flip_mode(std::string_view s) {
  if (s == "full_negation") return FlipMode::FullNegation;
  if (s == "number_conserving") return FlipMode::NumberConserving;
  if (s == "partial_u_delta") return FlipMode::PartialUDelta;
  return std::nullopt;
}

// Hamiltonian
//   H = sum_l D_l n_l - sum_l J_l (b_l^+ b_{l+1} + b_l b_{l+1}^+)
//       + sum_l U_l/2 b_l^+ b_l^+ b_l b_l + W sum_l (b_l^+ + b_l)
// as a sparse real-symmetric matrix in the chain Fock basis.
inline SparseMatrix build_hamiltonian_sparse(
    const ModelParams& p, std::int64_t max_dim = kDefaultMaxHilbertDim) {
  p.validate();
  const int d = p.local_dim;
  const int n = p.n_sites;
  const std::int64_t total = chain_dim(d, n);
  if (total > max_dim) {
    throw SizeError("Hilbert dimension " + std::to_string(total) +
                    " exceeds cap " + std::to_string(max_dim));
  }
  const LocalOps ops = local_ops(d);
  const Matrix pair = ops.create * ops.create * ops.annihilate * ops.annihilate;
  const Matrix onsite_drive = ops.create + ops.annihilate;

  SparseMatrix h(total, total);
  for (int l = 0; l < n; ++l) {
    Matrix local = p.detuning[l] * ops.number +
                   0.5 * p.interaction[l] * pair + p.drive * onsite_drive;
    h += embed_sparse(local, l, n, d);
  }
  for (int l = 0; l + 1 < n; ++l) {
    const SparseMatrix bl = embed_sparse(ops.annihilate, l, n, d);
    const SparseMatrix br = embed_sparse(ops.annihilate, l + 1, n, d);
    const SparseMatrix hop =
        SparseMatrix(bl.adjoint()) * br + bl * SparseMatrix(br.adjoint());
    h -= p.hopping[l] * hop;
  }
  h.prune(Complex{0.0, 0.0});
  h.makeCompressed();
  return h;
}

inline Matrix build_hamiltonian(const ModelParams& p,
                                std::int64_t max_dim = kDefaultMaxHilbertDim) {
  return Matrix(build_hamiltonian_sparse(p, max_dim));
}

// Trimer parameter sets for the sign-flip experiments.
enum class Preset { UniformCase1, UniformCase2, DisorderedCase1, DisorderedCase2 };
enum class SignChoice { Upper, Lower };

inline constexpr std::array<Preset, 4> kAllPresets = {
    Preset::UniformCase1, Preset::UniformCase2, Preset::DisorderedCase1,
    Preset::DisorderedCase2};

inline std::string_view to_string(Preset p) {
  switch (p) {
    case Preset::UniformCase1:
      return "uniform_case1";
    case Preset::UniformCase2:
      return "uniform_case2";
    case Preset::DisorderedCase1:
      return "disordered_case1";
    case Preset::DisorderedCase2:
      return "disordered_case2";
  }
  return "?";
}

inline std::string_view to_string(SignChoice s) {
  return s == SignChoice::Upper ? "upper" : "lower";
}

inline std::optional<Preset> parse_preset(std::string_view s) {
  for (Preset p : kAllPresets) {
    if (to_string(p) == s) return p;
  }
  return std::nullopt;
}

inline std::optional<SignChoice> parse_sign(std::string_view s) {
  if (s == "upper") return SignChoice::Upper;
  if (s == "lower") return SignChoice::Lower;
  return std::nullopt;
}

// Flip relating the two sign choices of a preset.
inline FlipMode preset_flip_mode(Preset p) {
  return (p == Preset::UniformCase1 || p == Preset::DisorderedCase1)
             ? FlipMode::NumberConserving
             : FlipMode::PartialUDelta;
}

inline std::string_view preset_description(Preset p) {
  switch (p) {
    case Preset::UniformCase1:
      return "uniform trimer, J=+-1 U=+-10 D=+-1 (all signs flip together)";
    case Preset::UniformCase2:
      return "uniform trimer, J=1 U=+-10 D=+-1 (hopping sign fixed)";
    case Preset::DisorderedCase1:
      return "disordered trimer, J=(+-1,-+3) U=(+-8,0,-+10) D=(0,-+10,+-1)";
    case Preset::DisorderedCase2:
      return "disordered trimer, J=(1,-3) U=(+-8,0,-+10) D=(0,-+10,+-1)";
  }
  return "?";
}

// Drive is left at zero; sweeps set it.
inline ModelParams table1_preset(Preset which, SignChoice sign, int local_dim = 5) {
  ModelParams p;
  p.n_sites = 3;
  p.dissipation = 1.0;
  p.local_dim = local_dim;
  p.drive = 0.0;
  switch (which) {
    case Preset::UniformCase1:
    case Preset::UniformCase2:
      p.hopping = {1.0, 1.0};
      p.interaction = {10.0, 10.0, 10.0};
      p.detuning = {1.0, 1.0, 1.0};
      break;
    case Preset::DisorderedCase1:
    case Preset::DisorderedCase2:
      p.hopping = {1.0, -3.0};
      p.interaction = {8.0, 0.0, -10.0};
      p.detuning = {0.0, -10.0, 1.0};
      break;
  }
  p.validate();
  if (sign == SignChoice::Lower) p = apply_flip(p, preset_flip_mode(which));
  return p;
}

}  // namespace ddbh

#endif  // DDBH_MODEL_HPP
