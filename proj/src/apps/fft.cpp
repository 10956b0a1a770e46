#include "pobj/apps/fft.hpp"

#include <fftw3.h>

#include <cmath>
#include <cstring>
#include <map>
#include <mutex>
#include <numbers>
#include <random>
#include <stdexcept>

#include <fmt/format.h>

namespace pobj::apps {

namespace {

Bytes to_bytes(const std::vector<cd>& values) {
  Bytes out(values.size() * sizeof(cd));
  std::memcpy(out.data(), values.data(), out.size());
  return out;
}

Future<std::vector<cd>> read_page(const Remote<ArrayPage>& page, const Domain3& dims) {
  return Future<std::vector<cd>>(remote_read(page.ref(), 0, dims.size() * sizeof(cd)), true);
}

// FFTW planning is not thread-safe; execution of an existing plan is.
std::mutex plan_mu;
std::map<std::size_t, fftw_plan> plans;

fftw_plan plan_for(std::size_t n) {
  std::lock_guard lock(plan_mu);
  auto it = plans.find(n);
  if (it != plans.end()) return it->second;
  std::vector<cd> scratch(n);
  auto* p = reinterpret_cast<fftw_complex*>(scratch.data());
  fftw_plan plan = fftw_plan_dft_1d(static_cast<int>(n), p, p, FFTW_FORWARD,
                                    FFTW_ESTIMATE | FFTW_UNALIGNED);
  if (plan == nullptr) throw std::runtime_error(fmt::format("cannot plan FFT of length {}", n));
  plans.emplace(n, plan);
  return plan;
}

/// exp(-2 pi i m / n) for m in [0, n), computed directly for accuracy.
std::vector<cd> twiddles(std::uint64_t n) {
  std::vector<cd> w(n);
  for (std::uint64_t m = 0; m < n; ++m) {
    const double angle = -2.0 * std::numbers::pi * static_cast<double>(m) / static_cast<double>(n);
    w[m] = cd(std::cos(angle), std::sin(angle));
  }
  return w;
}

/// Direct DFT along one axis of a row-major 3D array.
void dft_axis(std::vector<cd>& data, const Domain3& extent, int axis) {
  const std::uint64_t n = axis == 1 ? extent.n1 : axis == 2 ? extent.n2 : extent.n3;
  const std::uint64_t stride = axis == 1 ? extent.n2 * extent.n3 : axis == 2 ? extent.n3 : 1;
  const auto w = twiddles(n);
  std::vector<cd> in(n);
  std::vector<cd> out(n);
  for (std::uint64_t base = 0; base < data.size(); ++base) {
    // Visit each line once, from its first element.
    const std::uint64_t pos = (base / stride) % n;
    if (pos != 0) continue;
    for (std::uint64_t m = 0; m < n; ++m) in[m] = data[base + m * stride];
    for (std::uint64_t k = 0; k < n; ++k) {
      cd sum = 0.0;
      for (std::uint64_t m = 0; m < n; ++m) sum += in[m] * w[(k * m) % n];
      out[k] = sum;
    }
    for (std::uint64_t k = 0; k < n; ++k) data[base + k * stride] = out[k];
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Pages

std::vector<cd> transpose12(const std::vector<cd>& values, const Domain3& d) {
  std::vector<cd> out(values.size());
  for (std::uint64_t i = 0; i < d.n1; ++i)
    for (std::uint64_t j = 0; j < d.n2; ++j)
      for (std::uint64_t k = 0; k < d.n3; ++k)
        out[(j * d.n1 + i) * d.n3 + k] = values[d.index(i, j, k)];
  return out;
}

std::vector<cd> transpose13(const std::vector<cd>& values, const Domain3& d) {
  std::vector<cd> out(values.size());
  for (std::uint64_t i = 0; i < d.n1; ++i)
    for (std::uint64_t j = 0; j < d.n2; ++j)
      for (std::uint64_t k = 0; k < d.n3; ++k)
        out[(k * d.n2 + j) * d.n1 + i] = values[d.index(i, j, k)];
  return out;
}

ArrayPage::ArrayPage(std::uint64_t n1, std::uint64_t n2, std::uint64_t n3)
    : dims_{n1, n2, n3}, values_(n1 * n2 * n3) {
  if (n1 == 0 || n2 == 0 || n3 == 0) throw std::invalid_argument("page extents must be positive");
}

void ArrayPage::transpose12() {
  values_ = apps::transpose12(values_, dims_);
  std::swap(dims_.n1, dims_.n2);
}

void ArrayPage::transpose13() {
  values_ = apps::transpose13(values_, dims_);
  std::swap(dims_.n1, dims_.n3);
}

void ArrayPage::assign(std::vector<cd> values) {
  if (values.size() != values_.size()) throw std::invalid_argument("page size mismatch");
  values_ = std::move(values);
}

std::span<std::uint8_t> ArrayPage::bytes() {
  return {reinterpret_cast<std::uint8_t*>(values_.data()), values_.size() * sizeof(cd)};
}

void register_fft(KindRegistry& registry) {
  KindBuilder(kArrayPage, "ArrayPage")
      .method(kPageDims, "dims")
      .method(kTranspose12, "transpose12")
      .method(kTranspose13, "transpose13")
      .method(kPageValues, "values")
      .method(kPageAssign, "assign")
      .block([](ArrayPage& page) { return page.bytes(); })
      .register_in(registry);
  KindBuilder(kSlabFFT1, "SlabFFT1")
      .method(kComputeTransform, "compute_transform")
      .register_in(registry);
}

// ---------------------------------------------------------------------------
// Allocation and data movement

std::size_t circulant_device(std::uint64_t j1, std::uint64_t j2, std::uint64_t j3,
                             std::size_t devices) {
  return static_cast<std::size_t>((j1 + j2 + j3) % devices);
}

DistArray array_allocate(const Domain3& array_domain, const Domain3& page_domain,
                         const std::vector<AgentAddress>& devices) {
  if (devices.empty()) throw std::invalid_argument("array allocation needs at least one device");
  DistArray array{array_domain, page_domain, {}};
  std::vector<Future<Remote<ArrayPage>>> pages(array_domain.size());
  barrier_scope([&] {
    for (std::uint64_t j1 = 0; j1 < array_domain.n1; ++j1)
      for (std::uint64_t j2 = 0; j2 < array_domain.n2; ++j2)
        for (std::uint64_t j3 = 0; j3 < array_domain.n3; ++j3) {
          const auto& device = devices[circulant_device(j1, j2, j3, devices.size())];
          pages[array_domain.index(j1, j2, j3)] =
              construct(kArrayPage, device, page_domain.n1, page_domain.n2, page_domain.n3);
        }
  }, "allocate");
  array.pages.reserve(pages.size());
  for (auto& p : pages) array.pages.push_back(p.get());
  return array;
}

PageLine PendingLine::collect() const {
  PageLine line{page_domain_, {}};
  line.pages.reserve(reads_.size());
  for (const auto& r : reads_) {
    auto values = r.get();
    if (variant_ == LineVariant::transpose_at_reader) values = transpose13(values, page_domain_);
    line.pages.push_back(std::move(values));
  }
  return line;
}

PendingLine read_page_line(const DistArray& array, std::uint64_t j2, std::uint64_t j3,
                           LineVariant variant) {
  std::vector<Future<std::vector<cd>>> reads;
  reads.reserve(array.array_domain.n1);
  for (std::uint64_t j1 = 0; j1 < array.array_domain.n1; ++j1) {
    const auto& page = array.page(j1, j2, j3);
    // The page's object mailbox runs the transpose before the read.
    if (variant == LineVariant::transpose_at_device) call(page, kTranspose13);
    reads.push_back(read_page(page, array.page_domain));
  }
  return PendingLine(array.page_domain, variant, std::move(reads));
}

void write_page_line(const DistArray& array, std::uint64_t j2, std::uint64_t j3,
                     const PageLine& line, LineVariant variant) {
  const Domain3& d = array.page_domain;
  const Domain3 transposed{d.n3, d.n2, d.n1};
  for (std::uint64_t j1 = 0; j1 < array.array_domain.n1; ++j1) {
    const auto& page = array.page(j1, j2, j3);
    if (variant == LineVariant::transpose_at_device) {
      remote_write(page.ref(), 0, to_bytes(line.pages[j1]));
      call(page, kTranspose13);
    } else {
      remote_write(page.ref(), 0, to_bytes(transpose13(line.pages[j1], transposed)));
    }
  }
}

void fft_1d(std::vector<cd>& data) {
  if (data.size() <= 1) return;
  auto* p = reinterpret_cast<fftw_complex*>(data.data());
  fftw_execute_dft(plan_for(data.size()), p, p);
}

void fft_line(PageLine& line) {
  const Domain3& d = line.page_domain;
  const std::uint64_t pages = line.pages.size();
  std::vector<cd> column(pages * d.n1);
  for (std::uint64_t i3 = 0; i3 < d.n3; ++i3) {
    for (std::uint64_t i2 = 0; i2 < d.n2; ++i2) {
      const std::uint64_t base = (i3 * d.n2 + i2) * d.n1;
      for (std::uint64_t j1 = 0; j1 < pages; ++j1) {
        std::copy_n(line.pages[j1].begin() + static_cast<std::ptrdiff_t>(base), d.n1,
                    column.begin() + static_cast<std::ptrdiff_t>(j1 * d.n1));
      }
      fft_1d(column);
      for (std::uint64_t j1 = 0; j1 < pages; ++j1) {
        std::copy_n(column.begin() + static_cast<std::ptrdiff_t>(j1 * d.n1), d.n1,
                    line.pages[j1].begin() + static_cast<std::ptrdiff_t>(base));
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Slabs

SlabFFT1::SlabFFT1(DistArray array, std::uint64_t j2_begin, std::uint64_t j2_end, int variant)
    : array_(std::move(array)),
      j2_begin_(j2_begin),
      j2_end_(j2_end),
      variant_(static_cast<LineVariant>(variant)) {
  if (j2_begin_ > j2_end_ || j2_end_ > array_.array_domain.n2) {
    throw std::invalid_argument(fmt::format("slab [{}, {}) outside {} page columns", j2_begin_,
                                            j2_end_, array_.array_domain.n2));
  }
  if (variant != 1 && variant != 2) throw std::invalid_argument("unknown read variant");
}

void SlabFFT1::compute_transform() {
  std::vector<std::pair<std::uint64_t, std::uint64_t>> lines;
  for (std::uint64_t j2 = j2_begin_; j2 < j2_end_; ++j2)
    for (std::uint64_t j3 = 0; j3 < array_.array_domain.n3; ++j3) lines.emplace_back(j2, j3);
  if (lines.empty()) return;

  PendingLine pending;
  barrier_scope([&] { pending = read_page_line(array_, lines[0].first, lines[0].second, variant_); },
                "read_line");
  PageLine current = pending.collect();
  for (std::size_t k = 0; k < lines.size(); ++k) {
    const bool more = k + 1 < lines.size();
    barrier_scope([&] {
      if (more) pending = read_page_line(array_, lines[k + 1].first, lines[k + 1].second, variant_);
      local("fft_line", [&] { fft_line(current); });
    }, "pipeline");
    // Pending until the next barrier drains it.
    write_page_line(array_, lines[k].first, lines[k].second, current, variant_);
    if (more) current = pending.collect();
  }
}

void array_fft1(const DistArray& array, const std::vector<AgentAddress>& cpus,
                LineVariant variant) {
  const std::uint64_t columns = array.array_domain.n2;
  if (cpus.empty() || columns % cpus.size() != 0) {
    throw std::invalid_argument(fmt::format(
        "{} page columns cannot be split evenly over {} cpus", columns, cpus.size()));
  }
  const std::uint64_t width = columns / cpus.size();
  std::vector<Future<Remote<SlabFFT1>>> slabs(cpus.size());
  barrier_scope([&] {
    for (std::size_t i = 0; i < cpus.size(); ++i) {
      slabs[i] = construct(kSlabFFT1, cpus[i], array, i * width, (i + 1) * width,
                           static_cast<int>(variant));
    }
  }, "slabs");
  barrier_scope([&] {
    for (auto& s : slabs) call(s, kComputeTransform);
  }, "fft1");
  for (auto& s : slabs) destroy(s.get());
}

DistArray global_transpose12(const DistArray& array) {
  barrier_scope([&] {
    for (const auto& p : array.pages) call(p, kTranspose12);
  }, "transpose12");
  const Domain3& a = array.array_domain;
  DistArray out{{a.n2, a.n1, a.n3},
                {array.page_domain.n2, array.page_domain.n1, array.page_domain.n3},
                std::vector<Remote<ArrayPage>>(array.pages.size())};
  for (std::uint64_t j1 = 0; j1 < a.n1; ++j1)
    for (std::uint64_t j2 = 0; j2 < a.n2; ++j2)
      for (std::uint64_t j3 = 0; j3 < a.n3; ++j3)
        out.pages[out.array_domain.index(j2, j1, j3)] = array.page(j1, j2, j3);
  return out;
}

DistArray global_transpose13(const DistArray& array) {
  barrier_scope([&] {
    for (const auto& p : array.pages) call(p, kTranspose13);
  }, "transpose13");
  const Domain3& a = array.array_domain;
  DistArray out{{a.n3, a.n2, a.n1},
                {array.page_domain.n3, array.page_domain.n2, array.page_domain.n1},
                std::vector<Remote<ArrayPage>>(array.pages.size())};
  for (std::uint64_t j1 = 0; j1 < a.n1; ++j1)
    for (std::uint64_t j2 = 0; j2 < a.n2; ++j2)
      for (std::uint64_t j3 = 0; j3 < a.n3; ++j3)
        out.pages[out.array_domain.index(j3, j2, j1)] = array.page(j1, j2, j3);
  return out;
}

DistArray array_fft3d(const DistArray& array, const std::vector<AgentAddress>& cpus,
                      LineVariant variant) {
  array_fft1(array, cpus, variant);
  DistArray t = global_transpose12(array);
  array_fft1(t, cpus, variant);
  DistArray back = global_transpose12(t);
  t = global_transpose13(back);
  array_fft1(t, cpus, variant);
  return global_transpose13(t);
}

void array_store(const DistArray& array, const std::vector<cd>& values) {
  const Domain3 extent = array.extent();
  if (values.size() != extent.size()) throw std::invalid_argument("array size mismatch");
  const Domain3& a = array.array_domain;
  const Domain3& p = array.page_domain;
  barrier_scope([&] {
    std::vector<cd> page(p.size());
    for (std::uint64_t j1 = 0; j1 < a.n1; ++j1)
      for (std::uint64_t j2 = 0; j2 < a.n2; ++j2)
        for (std::uint64_t j3 = 0; j3 < a.n3; ++j3) {
          for (std::uint64_t i1 = 0; i1 < p.n1; ++i1)
            for (std::uint64_t i2 = 0; i2 < p.n2; ++i2)
              for (std::uint64_t i3 = 0; i3 < p.n3; ++i3)
                page[p.index(i1, i2, i3)] =
                    values[extent.index(j1 * p.n1 + i1, j2 * p.n2 + i2, j3 * p.n3 + i3)];
          remote_write(array.page(j1, j2, j3).ref(), 0, to_bytes(page));
        }
  }, "store");
}

std::vector<cd> array_load(const DistArray& array) {
  const Domain3 extent = array.extent();
  const Domain3& a = array.array_domain;
  const Domain3& p = array.page_domain;
  std::vector<Future<std::vector<cd>>> reads(array.pages.size());
  barrier_scope([&] {
    for (std::size_t i = 0; i < array.pages.size(); ++i) reads[i] = read_page(array.pages[i], p);
  }, "load");
  std::vector<cd> values(extent.size());
  for (std::uint64_t j1 = 0; j1 < a.n1; ++j1)
    for (std::uint64_t j2 = 0; j2 < a.n2; ++j2)
      for (std::uint64_t j3 = 0; j3 < a.n3; ++j3) {
        const auto page = reads[a.index(j1, j2, j3)].get();
        for (std::uint64_t i1 = 0; i1 < p.n1; ++i1)
          for (std::uint64_t i2 = 0; i2 < p.n2; ++i2)
            for (std::uint64_t i3 = 0; i3 < p.n3; ++i3)
              values[extent.index(j1 * p.n1 + i1, j2 * p.n2 + i2, j3 * p.n3 + i3)] =
                  page[p.index(i1, i2, i3)];
      }
  return values;
}

// ---------------------------------------------------------------------------
// Oracle and demo

std::vector<cd> dft3d_oracle(const std::vector<cd>& values, const Domain3& extent) {
  std::vector<cd> out = values;
  dft_axis(out, extent, 3);
  dft_axis(out, extent, 2);
  dft_axis(out, extent, 1);
  return out;
}

cd dft3d_point(const std::vector<cd>& values, const Domain3& extent, std::uint64_t k1,
               std::uint64_t k2, std::uint64_t k3) {
  const auto w1 = twiddles(extent.n1);
  const auto w2 = twiddles(extent.n2);
  const auto w3 = twiddles(extent.n3);
  cd sum = 0.0;
  for (std::uint64_t m1 = 0; m1 < extent.n1; ++m1)
    for (std::uint64_t m2 = 0; m2 < extent.n2; ++m2)
      for (std::uint64_t m3 = 0; m3 < extent.n3; ++m3)
        sum += values[extent.index(m1, m2, m3)] * w1[(k1 * m1) % extent.n1] *
               w2[(k2 * m2) % extent.n2] * w3[(k3 * m3) % extent.n3];
  return sum;
}

FftReport fft3d_demo(const FftConfig& config) {
  std::vector<Future<AgentAddress>> device_hosts(config.devices);
  barrier_scope([&] {
    for (std::size_t d = 0; d < config.devices; ++d) {
      device_hosts[d] = create_host("device" + std::to_string(d));
    }
  }, "devices");
  std::vector<AgentAddress> devices;
  for (auto& d : device_hosts) devices.push_back(d.get());

  DistArray array = array_allocate(config.pages, config.page_size, devices);

  std::vector<Future<AgentAddress>> cpu_hosts(config.cpus);
  barrier_scope([&] {
    for (std::size_t c = 0; c < config.cpus; ++c) {
      cpu_hosts[c] = create_host("cpu" + std::to_string(c));
    }
  }, "cpus");
  std::vector<AgentAddress> cpus;
  for (auto& c : cpu_hosts) cpus.push_back(c.get());

  const Domain3 extent = array.extent();
  std::vector<cd> input(extent.size());
  if (!config.zero_input) {
    std::mt19937_64 rng(config.seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (auto& x : input) x = cd(dist(rng), dist(rng));
  }
  array_store(array, input);

  const DistArray result = array_fft3d(array, cpus, config.variant);
  const std::vector<cd> output = array_load(result);
  barrier_scope([&] {
    for (const auto& p : result.pages) destroy(p);
  }, "free");

  FftReport report;
  report.extent = extent;
  const auto expected = local("oracle", [&] { return dft3d_oracle(input, extent); });
  double sum_sq = 0.0;
  double in_energy = 0.0;
  double out_energy = 0.0;
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const double err = std::abs(output[i] - expected[i]);
    if (err > report.max_abs_error) {
      report.max_abs_error = err;
      report.worst_index = i;
    }
    sum_sq += std::norm(expected[i]);
    in_energy += std::norm(input[i]);
    out_energy += std::norm(output[i]);
  }
  report.rms = std::sqrt(sum_sq / static_cast<double>(expected.size()));
  report.tolerance = kFftRelTolerance * report.rms;

  std::mt19937_64 rng(config.seed ^ 0x5eedULL);
  for (std::size_t s = 0; s < config.spot_checks && !expected.empty(); ++s) {
    const auto k1 = rng() % extent.n1;
    const auto k2 = rng() % extent.n2;
    const auto k3 = rng() % extent.n3;
    const cd direct = dft3d_point(input, extent, k1, k2, k3);
    report.spot_max_error =
        std::max(report.spot_max_error, std::abs(direct - output[extent.index(k1, k2, k3)]));
  }

  const double scaled = in_energy * static_cast<double>(extent.size());
  report.parseval_rel_error =
      scaled == 0.0 ? std::abs(out_energy) : std::abs(scaled - out_energy) / scaled;

  report.ok = report.max_abs_error <= report.tolerance &&
              report.spot_max_error <= report.tolerance &&
              report.parseval_rel_error <= kFftRelTolerance;
  return report;
}

}  // namespace pobj::apps
