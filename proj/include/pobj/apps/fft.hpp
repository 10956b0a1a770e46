#pragma once

// Paged 3D FFT. A DistArray is a grid of ArrayPage objects placed on device
// hosts in circulant order. The dimension-1 pass splits the page grid into
// slabs along dimension 2; each SlabFFT1 streams page lines (all pages that
// share j2, j3) through a double-buffered read / transform / write pipeline.
// Dimensions 2 and 3 reuse the same pass after a global transpose.

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "pobj/api.hpp"
#include "pobj/kind.hpp"


namespace pobj::apps {

using cd = std::complex<double>;

struct Domain3 {
  std::uint64_t n1 = 1;
  std::uint64_t n2 = 1;
  std::uint64_t n3 = 1;

  std::uint64_t size() const { return n1 * n2 * n3; }
  std::uint64_t index(std::uint64_t i1, std::uint64_t i2, std::uint64_t i3) const {
    return (i1 * n2 + i2) * n3 + i3;
  }
  friend bool operator==(const Domain3&, const Domain3&) = default;

  template <class Archive>
  void serialize(Archive& ar) {
    ar(n1, n2, n3);
  }
};

/// Small dense 3D block, row-major with dimension 3 fastest.
class ArrayPage {
 public:
  ArrayPage(std::uint64_t n1, std::uint64_t n2, std::uint64_t n3);

  Domain3 dims() const { return dims_; }
  /// (i, j, k) -> (j, i, k)
  void transpose12();
  /// (i, j, k) -> (k, j, i)
  void transpose13();
  std::vector<cd> values() const { return values_; }
  void assign(std::vector<cd> values);

  std::span<std::uint8_t> bytes();

 private:
  Domain3 dims_;
  std::vector<cd> values_;
};

std::vector<cd> transpose12(const std::vector<cd>& values, const Domain3& dims);
std::vector<cd> transpose13(const std::vector<cd>& values, const Domain3& dims);

inline constexpr Kind<ArrayPage, std::uint64_t, std::uint64_t, std::uint64_t> kArrayPage{300};
inline constexpr Method<&ArrayPage::dims> kPageDims{1};
inline constexpr Method<&ArrayPage::transpose12> kTranspose12{2};
inline constexpr Method<&ArrayPage::transpose13> kTranspose13{3};
inline constexpr Method<&ArrayPage::values> kPageValues{4};
inline constexpr Method<&ArrayPage::assign> kPageAssign{5};

/// Pages per dimension plus elements per page; pages in row-major grid order.
struct DistArray {
  Domain3 array_domain;
  Domain3 page_domain;
  std::vector<Remote<ArrayPage>> pages;

  Domain3 extent() const {
    return {array_domain.n1 * page_domain.n1, array_domain.n2 * page_domain.n2,
            array_domain.n3 * page_domain.n3};
  }
  const Remote<ArrayPage>& page(std::uint64_t j1, std::uint64_t j2, std::uint64_t j3) const {
    return pages[array_domain.index(j1, j2, j3)];
  }

  template <class Archive>
  void serialize(Archive& ar) {
    ar(array_domain, page_domain, pages);
  }
};

/// Page (j1, j2, j3) goes to device (j1 + j2 + j3) mod devices.
std::size_t circulant_device(std::uint64_t j1, std::uint64_t j2, std::uint64_t j3,
                             std::size_t devices);

/// Constructs all pages (zero) inside a barrier.
DistArray array_allocate(const Domain3& array_domain, const Domain3& page_domain,
                         const std::vector<AgentAddress>& devices);

enum class LineVariant : int { transpose_at_device = 1, transpose_at_reader = 2 };

/// A page line held locally with dimension 1 contiguous inside each page:
/// page j1's element (i1, i2, i3) sits at (i3 * n2 + i2) * n1 + i1.
struct PageLine {
  Domain3 page_domain;
  std::vector<std::vector<cd>> pages;
};

/// Issued reads of one page line; collect() after the enclosing barrier.
class PendingLine {
 public:
  PendingLine() = default;
  PendingLine(Domain3 page_domain, LineVariant variant,
              std::vector<Future<std::vector<cd>>> reads)
      : page_domain_(page_domain), variant_(variant), reads_(std::move(reads)) {}

  PageLine collect() const;

 private:
  Domain3 page_domain_;
  LineVariant variant_ = LineVariant::transpose_at_device;
  std::vector<Future<std::vector<cd>>> reads_;
};

PendingLine read_page_line(const DistArray& array, std::uint64_t j2, std::uint64_t j3,
                           LineVariant variant);
void write_page_line(const DistArray& array, std::uint64_t j2, std::uint64_t j3,
                     const PageLine& line, LineVariant variant);

/// Forward, unnormalized DFT along dimension 1 of every (i2, i3) column.
void fft_line(PageLine& line);

/// In-place forward DFT of one contiguous sequence (FFTW).
void fft_1d(std::vector<cd>& data);

class SlabFFT1 {
 public:
  SlabFFT1(DistArray array, std::uint64_t j2_begin, std::uint64_t j2_end, int variant);
  /// Pipelined: the read of line k+1 overlaps the transform of line k.
  void compute_transform();

 private:
  DistArray array_;
  std::uint64_t j2_begin_;
  std::uint64_t j2_end_;
  LineVariant variant_;
};

inline constexpr Kind<SlabFFT1, DistArray, std::uint64_t, std::uint64_t, int> kSlabFFT1{301};
inline constexpr Method<&SlabFFT1::compute_transform> kComputeTransform{1};

void register_fft(KindRegistry& registry);

/// Dimension-1 pass: one slab of N2 / cpus page columns per cpu host.
void array_fft1(const DistArray& array, const std::vector<AgentAddress>& cpus,
                LineVariant variant);

/// Swaps dimensions 1 and 2 (or 1 and 3) of the whole array: every page is
/// transposed where it lives and the page grid is re-indexed.
DistArray global_transpose12(const DistArray& array);
DistArray global_transpose13(const DistArray& array);

/// Full 3D forward FFT: dim 1, then dims 2 and 3 via transposes.
DistArray array_fft3d(const DistArray& array, const std::vector<AgentAddress>& cpus,
                      LineVariant variant);

/// Dense local copies in global row-major order (dimension 3 fastest).
void array_store(const DistArray& array, const std::vector<cd>& values);
std::vector<cd> array_load(const DistArray& array);

/// Separable direct DFT, O(n^2) per line along each axis.
std::vector<cd> dft3d_oracle(const std::vector<cd>& values, const Domain3& extent);
/// Direct triple sum for a single output frequency.
cd dft3d_point(const std::vector<cd>& values, const Domain3& extent, std::uint64_t k1,
               std::uint64_t k2, std::uint64_t k3);

struct FftConfig {
  Domain3 pages{4, 4, 4};
  Domain3 page_size{8, 8, 8};
  std::size_t devices = 4;
  std::size_t cpus = 4;
  std::uint64_t seed = 1;
  LineVariant variant = LineVariant::transpose_at_device;
  bool zero_input = false;
  std::size_t spot_checks = 8;
};

struct FftReport {
  Domain3 extent;
  double max_abs_error = 0.0;
  double rms = 0.0;
  double tolerance = 0.0;     // max_abs_error must not exceed this
  std::uint64_t worst_index = 0;
  double spot_max_error = 0.0;
  double parseval_rel_error = 0.0;
  bool ok = false;
};

inline constexpr double kFftRelTolerance = 1e-9;

/// Runs inside an activity: hosts, allocation, input, 3D transform, oracle.
FftReport fft3d_demo(const FftConfig& config);

}  // namespace pobj::apps
