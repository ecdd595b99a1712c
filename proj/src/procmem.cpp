#include "ltnn/procmem.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "ltnn/fnv.hpp"

namespace ltnn {

MemoryRegion parse_maps_line(const std::string& line) {
  // <start>-<end> <perms> <offset> <dev> <inode> [path]
  MemoryRegion r;
  std::istringstream is(line);
  std::string range, perms, offset, dev, inode;
  is >> range >> perms >> offset >> dev >> inode;
  require(!is.fail(), Errc::parse_error, "malformed maps line: " + line);
  const size_t dash = range.find('-');
  require(dash != std::string::npos, Errc::parse_error, "malformed address range: " + range);
  r.start = std::stoull(range.substr(0, dash), nullptr, 16);
  r.end = std::stoull(range.substr(dash + 1), nullptr, 16);
  require(r.start < r.end, Errc::parse_error, "empty address range: " + range);
  require(perms.size() >= 4, Errc::parse_error, "malformed permissions: " + perms);
  r.read = perms[0] == 'r';
  r.write = perms[1] == 'w';
  r.exec = perms[2] == 'x';
  r.shared = perms[3] == 's';
  std::string rest;
  std::getline(is, rest);
  const size_t ns = rest.find_first_not_of(' ');
  if (ns != std::string::npos) r.desc = rest.substr(ns);
  return r;
}

namespace {

void check_pid_errno(int pid, const std::string& what) {
  if (errno == ENOENT || errno == ESRCH)
    fail(Errc::no_such_process, "process " + std::to_string(pid) + " does not exist");
  if (errno == EACCES || errno == EPERM)
    fail(Errc::permission_denied, "not allowed to " + what + " process " + std::to_string(pid));
  fail(Errc::io_error, "cannot " + what + " process " + std::to_string(pid) + ": " + std::strerror(errno));
}

}  // namespace

std::vector<MemoryRegion> enumerate_regions(int pid) {
  require(pid > 0, Errc::invalid_argument, "pid must be positive");
  if (::access(("/proc/" + std::to_string(pid)).c_str(), F_OK) != 0)
    fail(Errc::no_such_process, "process " + std::to_string(pid) + " does not exist");
  const std::string path = "/proc/" + std::to_string(pid) + "/maps";
  std::ifstream f(path);
  require(f.good(), Errc::permission_denied, "cannot read maps of process " + std::to_string(pid));
  std::vector<MemoryRegion> regions;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    regions.push_back(parse_maps_line(line));
  }
  std::sort(regions.begin(), regions.end(),
            [](const MemoryRegion& a, const MemoryRegion& b) { return a.start < b.start; });
  return regions;
}

ProcessTarget::ProcessTarget(int pid) : pid_(pid) {
  require(pid > 0, Errc::invalid_argument, "pid must be positive");
  const std::string mem = "/proc/" + std::to_string(pid) + "/mem";
  errno = 0;
  mem_fd_ = ::open(mem.c_str(), O_RDWR);
  if (mem_fd_ < 0) check_pid_errno(pid, "open the mem file of");
}

ProcessTarget::~ProcessTarget() {
  if (mem_fd_ >= 0) ::close(mem_fd_);
}

std::vector<MemoryRegion> ProcessTarget::regions() { return enumerate_regions(pid_); }

std::int64_t ProcessTarget::read_bytes(std::uint64_t addr, std::span<std::uint8_t> out) {
  size_t got = 0;
  while (got < out.size()) {
    const ssize_t r = ::pread(mem_fd_, out.data() + got, out.size() - got,
                              static_cast<off_t>(addr + got));
    if (r < 0) return got > 0 ? static_cast<std::int64_t>(got) : -1;
    if (r == 0) break;
    got += static_cast<size_t>(r);
  }
  return static_cast<std::int64_t>(got);
}

std::int64_t ProcessTarget::write_bytes(std::uint64_t addr, std::span<const std::uint8_t> data) {
  size_t put = 0;
  while (put < data.size()) {
    const ssize_t r = ::pwrite(mem_fd_, data.data() + put, data.size() - put,
                               static_cast<off_t>(addr + put));
    if (r <= 0) return put > 0 ? static_cast<std::int64_t>(put) : -1;
    put += static_cast<size_t>(r);
  }
  return static_cast<std::int64_t>(put);
}

void FixtureTarget::add_region(std::uint64_t start, std::vector<std::uint8_t> bytes, bool write,
                               std::string desc) {
  Backing b;
  b.region.start = start;
  b.region.end = start + bytes.size();
  b.region.read = true;
  b.region.write = write;
  b.region.desc = std::move(desc);
  b.bytes = std::move(bytes);
  backings_.push_back(std::move(b));
}

void FixtureTarget::add_generated_region(std::uint64_t start, std::uint64_t length, Filler gen,
                                         std::string desc) {
  Backing b;
  b.region.start = start;
  b.region.end = start + length;
  b.region.read = true;
  b.region.write = false;
  b.region.desc = std::move(desc);
  b.gen = std::move(gen);
  backings_.push_back(std::move(b));
}

void FixtureTarget::add_unreadable_region(std::uint64_t start, std::uint64_t length, std::string desc) {
  Backing b;
  b.region.start = start;
  b.region.end = start + length;
  b.region.read = true;  // advertised readable, reads fail (e.g. special mappings)
  b.region.write = false;
  b.region.desc = std::move(desc);
  b.readable = false;
  backings_.push_back(std::move(b));
}

std::vector<MemoryRegion> FixtureTarget::regions() {
  std::vector<MemoryRegion> out;
  out.reserve(backings_.size());
  for (const auto& b : backings_) out.push_back(b.region);
  std::sort(out.begin(), out.end(),
            [](const MemoryRegion& a, const MemoryRegion& b) { return a.start < b.start; });
  return out;
}

std::int64_t FixtureTarget::read_bytes(std::uint64_t addr, std::span<std::uint8_t> out) {
  for (auto& b : backings_) {
    if (addr < b.region.start || addr >= b.region.end) continue;
    if (!b.readable) return -1;
    const std::uint64_t avail = b.region.end - addr;
    const size_t n = static_cast<size_t>(std::min<std::uint64_t>(avail, out.size()));
    const std::uint64_t off = addr - b.region.start;
    if (b.gen) {
      b.gen(off, out.subspan(0, n));
    } else {
      std::memcpy(out.data(), b.bytes.data() + off, n);
    }
    return static_cast<std::int64_t>(n);
  }
  return -1;
}

std::int64_t FixtureTarget::write_bytes(std::uint64_t addr, std::span<const std::uint8_t> data) {
  for (auto& b : backings_) {
    if (addr < b.region.start || addr >= b.region.end) continue;
    if (!b.region.write || b.gen || !b.readable) return -1;
    const std::uint64_t avail = b.region.end - addr;
    if (data.size() > avail) return -1;
    std::memcpy(b.bytes.data() + (addr - b.region.start), data.data(), data.size());
    return static_cast<std::int64_t>(data.size());
  }
  return -1;
}

std::span<const std::uint8_t> FixtureTarget::bytes_of(std::uint64_t start) const {
  for (const auto& b : backings_)
    if (b.region.start == start) return b.bytes;
  fail(Errc::out_of_bounds, "no fixture region at that address");
}

namespace {

constexpr std::uint64_t kChunk = 1 << 20;  // 1 MiB
constexpr std::uint64_t kOverlap = 7;      // an 8-byte prefix can straddle at most 7 bytes

std::string hex(std::uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "0x%llx", static_cast<unsigned long long>(v));
  return buf;
}

// all in-chunk offsets at which the 8-byte prefix occurs, limited to starts
// in [0, limit)
void find_prefix_hits(const std::uint8_t* chunk, size_t limit, const std::array<std::uint8_t, 8>& prefix,
                      std::vector<size_t>& hits) {
  hits.clear();
  if (limit == 0) return;
  const std::uint8_t first = prefix[0];
  const std::uint8_t* p = chunk;
  const std::uint8_t* end = chunk + limit;  // exclusive bound for match starts
  while (p < end) {
    p = static_cast<const std::uint8_t*>(std::memchr(p, first, static_cast<size_t>(end - p)));
    if (!p) break;
    if (std::memcmp(p, prefix.data(), 8) == 0) hits.push_back(static_cast<size_t>(p - chunk));
    ++p;
  }
}

}  // namespace

std::vector<LocatorScan> scan_many(ByteTarget& target, std::span<const Locator> locators,
                                   ScanNotes* notes) {
  std::vector<LocatorScan> result(locators.size());
  for (const auto& loc : locators)
    require(loc.length >= 8, Errc::invalid_argument, "locator length must cover its 8-byte prefix");

  std::vector<std::uint8_t> chunk(kChunk + kOverlap + 1);
  std::vector<std::uint8_t> layer_buf;
  std::vector<size_t> hits;
  for (const MemoryRegion& region : target.regions()) {
    if (!region.read) continue;
    const std::uint64_t rlen = region.end - region.start;
    bool skipped = false;
    for (std::uint64_t off = 0; off < rlen;) {
      const std::uint64_t want = std::min<std::uint64_t>(kChunk + kOverlap, rlen - off);
      if (want < 8) break;  // too small to hold a prefix
      const std::int64_t got = target.read_bytes(region.start + off, {chunk.data(), static_cast<size_t>(want)});
      if (got < 8) {
        if (notes)
          notes->skipped_regions.push_back(hex(region.start) + "-" + hex(region.end) + " " + region.desc +
                                           ": read failed at offset " + hex(off));
        skipped = true;
        break;
      }
      // prefix starts handled by this chunk: [off, off + start_limit)
      const size_t start_limit = std::min<size_t>(static_cast<size_t>(got) - 7, static_cast<size_t>(kChunk));
      for (size_t li = 0; li < locators.size(); ++li) {
        const Locator& loc = locators[li];
        find_prefix_hits(chunk.data(), start_limit, loc.prefix, hits);
        for (const size_t h : hits) {
          result[li].prefix_matches += 1;
          const std::uint64_t addr = region.start + off + h;
          if (addr + loc.length > region.end) continue;  // would span the region boundary
          std::uint64_t sum;
          if (h + loc.length <= static_cast<std::uint64_t>(got)) {
            sum = fnv1a64({chunk.data() + h, loc.length});
          } else {
            layer_buf.resize(loc.length);
            const std::int64_t lr = target.read_bytes(addr, {layer_buf.data(), layer_buf.size()});
            if (lr != static_cast<std::int64_t>(loc.length)) continue;
            sum = fnv1a64({layer_buf.data(), layer_buf.size()});
          }
          if (sum == loc.checksum) result[li].confirmed.push_back(addr);
        }
      }
      if (static_cast<std::uint64_t>(got) < want) {
        if (notes)
          notes->skipped_regions.push_back(hex(region.start) + "-" + hex(region.end) + " " + region.desc +
                                           ": short read, tail skipped");
        skipped = true;
        break;
      }
      off += kChunk;  // next chunk re-reads the 7-byte overlap
    }
    (void)skipped;
  }
  return result;
}

LocatorScan scan_for(ByteTarget& target, const std::array<std::uint8_t, 8>& prefix, std::uint32_t length,
                     std::uint64_t checksum, ScanNotes* notes) {
  Locator loc{prefix, checksum, length};
  return scan_many(target, {&loc, 1}, notes)[0];
}

namespace {

struct LayerPlan {
  std::uint32_t layer = 0;
  Locator orig, patched;
  bool same_locator = false;
  std::vector<const PatchRegion*> regions;
  // scan results
  std::int64_t prefix_matches = 0;
  std::vector<std::uint64_t> confirmed_orig, confirmed_patched;
};

}  // namespace

MatchReport live_patch(ByteTarget& target, const PatchFile& patch, bool dry_run) {
  validate_patch(patch);
  MatchReport report;
  report.dry_run = dry_run;
  if (patch.regions.empty()) {
    report.ok = true;
    return report;
  }

  std::map<std::uint32_t, LayerPlan> plans;
  for (const auto& r : patch.regions) {
    LayerPlan& lp = plans[r.layer];
    if (lp.regions.empty()) {
      lp.layer = r.layer;
      lp.orig = Locator{r.prefix, r.checksum, r.layer_bytes};
      lp.patched = Locator{r.patched_prefix, r.patched_checksum, r.layer_bytes};
      lp.same_locator = r.prefix == r.patched_prefix && r.checksum == r.patched_checksum;
    }
    lp.regions.push_back(&r);
  }

  std::vector<Locator> locators;
  std::vector<std::pair<std::uint32_t, bool>> owner;  // (layer, is_patched_variant)
  for (auto& [layer, lp] : plans) {
    locators.push_back(lp.orig);
    owner.emplace_back(layer, false);
    if (!lp.same_locator) {
      locators.push_back(lp.patched);
      owner.emplace_back(layer, true);
    }
  }

  ScanNotes notes;
  const auto scans = scan_many(target, locators, &notes);
  report.skipped_regions = std::move(notes.skipped_regions);
  for (size_t i = 0; i < scans.size(); ++i) {
    LayerPlan& lp = plans[owner[i].first];
    lp.prefix_matches += scans[i].prefix_matches;
    auto& dst = owner[i].second ? lp.confirmed_patched : lp.confirmed_orig;
    dst = scans[i].confirmed;
  }

  // all-or-nothing: every layer needs exactly one confirmed address
  for (auto& [layer, lp] : plans) {
    std::vector<std::uint64_t> all = lp.confirmed_orig;
    for (std::uint64_t a : lp.confirmed_patched)
      if (std::find(all.begin(), all.end(), a) == all.end()) all.push_back(a);
    if (all.size() != 1) {
      report.aborted = true;
      report.abort_reason = "layer " + std::to_string(layer) + ": " +
                            (all.empty() ? "no confirmed match" : std::to_string(all.size()) + " ambiguous matches");
      break;
    }
  }

  for (auto& [layer, lp] : plans) {
    const bool fresh = lp.confirmed_orig.size() == 1;
    const bool repatch = !fresh && lp.confirmed_patched.size() == 1;
    for (const PatchRegion* pr : lp.regions) {
      RegionReport rr;
      rr.layer = layer;
      rr.offset = pr->offset;
      rr.prefix_matches = lp.prefix_matches;
      if (!report.aborted) {
        rr.layer_address = fresh ? lp.confirmed_orig[0] : lp.confirmed_patched[0];
        rr.confirmed = true;
        rr.already_patched = repatch;
      }
      report.regions.push_back(std::move(rr));
    }
  }
  if (report.aborted) return report;

  if (dry_run) {
    report.ok = true;
    return report;
  }

  bool all_written = true;
  for (auto& rr : report.regions) {
    if (rr.already_patched) {
      rr.note = "already patched; bytes left as found";
      continue;
    }
    if (!all_written) {
      rr.note = "skipped after earlier write failure";
      continue;
    }
    const LayerPlan& lp = plans[rr.layer];
    const PatchRegion* pr = nullptr;
    for (const PatchRegion* cand : lp.regions)
      if (cand->offset == rr.offset) pr = cand;
    const std::uint64_t addr = rr.layer_address + static_cast<std::uint64_t>(rr.offset) * sizeof(float);
    const auto* bytes = reinterpret_cast<const std::uint8_t*>(pr->values.data());
    const size_t len = pr->values.size() * sizeof(float);
    const std::int64_t wrote = target.write_bytes(addr, {bytes, len});
    rr.bytes_written = std::max<std::int64_t>(wrote, 0);
    report.total_bytes_written += rr.bytes_written;
    if (wrote != static_cast<std::int64_t>(len)) {
      rr.note = "write failed after " + std::to_string(rr.bytes_written) + " of " + std::to_string(len) +
                " bytes at " + hex(addr);
      all_written = false;
    }
  }
  report.ok = all_written;
  if (!all_written && report.abort_reason.empty()) report.abort_reason = "write failure; see region notes";
  return report;
}

MatchReport live_patch_pid(int pid, const PatchFile& patch, bool dry_run) {
  ProcessTarget target(pid);
  return live_patch(target, patch, dry_run);
}

}  // namespace ltnn
