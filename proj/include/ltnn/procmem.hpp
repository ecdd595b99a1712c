#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ltnn/patch.hpp"

namespace ltnn {

struct MemoryRegion {
  std::uint64_t start = 0;
  std::uint64_t end = 0;
  bool read = false, write = false, exec = false, shared = false;
  std::string desc;  // pathname / [heap] / [stack] / empty
};

// One line of the proc filesystem's per-process map listing.
MemoryRegion parse_maps_line(const std::string& line);

// Readable+writable state of a process's address space, or an in-memory stand
// -in for unprivileged tests. read_bytes/write_bytes return the byte count
// actually transferred (possibly short), or -1 on hard failure.
class ByteTarget {
 public:
  virtual ~ByteTarget() = default;
  virtual std::vector<MemoryRegion> regions() = 0;
  virtual std::int64_t read_bytes(std::uint64_t addr, std::span<std::uint8_t> out) = 0;
  virtual std::int64_t write_bytes(std::uint64_t addr, std::span<const std::uint8_t> data) = 0;
};

// A live process via the proc filesystem (maps listing + mem file).
class ProcessTarget : public ByteTarget {
 public:
  explicit ProcessTarget(int pid);
  ~ProcessTarget() override;
  ProcessTarget(const ProcessTarget&) = delete;
  ProcessTarget& operator=(const ProcessTarget&) = delete;

  std::vector<MemoryRegion> regions() override;
  std::int64_t read_bytes(std::uint64_t addr, std::span<std::uint8_t> out) override;
  std::int64_t write_bytes(std::uint64_t addr, std::span<const std::uint8_t> data) override;

 private:
  int pid_ = -1;
  int mem_fd_ = -1;
};

std::vector<MemoryRegion> enumerate_regions(int pid);

// Synthetic address space: regions backed by owned bytes or by a pure
// generator (address -> byte), the latter letting tests scan gigabytes
// without materializing them.
class FixtureTarget : public ByteTarget {
 public:
  // filler(region_offset, out) materializes `out.size()` bytes starting at
  // that offset of the region
  using Filler = std::function<void(std::uint64_t, std::span<std::uint8_t>)>;

  void add_region(std::uint64_t start, std::vector<std::uint8_t> bytes, bool write = true,
                  std::string desc = "");
  void add_generated_region(std::uint64_t start, std::uint64_t length, Filler gen,
                            std::string desc = "");
  void add_unreadable_region(std::uint64_t start, std::uint64_t length, std::string desc = "");

  std::vector<MemoryRegion> regions() override;
  std::int64_t read_bytes(std::uint64_t addr, std::span<std::uint8_t> out) override;
  std::int64_t write_bytes(std::uint64_t addr, std::span<const std::uint8_t> data) override;

  // fixture-side inspection for tests
  std::span<const std::uint8_t> bytes_of(std::uint64_t start) const;

 private:
  struct Backing {
    MemoryRegion region;
    std::vector<std::uint8_t> bytes;  // owned backing
    Filler gen;                       // generated backing
    bool readable = true;
  };
  std::vector<Backing> backings_;
};

struct Locator {
  std::array<std::uint8_t, 8> prefix{};
  std::uint64_t checksum = 0;
  std::uint32_t length = 0;  // checksum extent in bytes
};

struct LocatorScan {
  std::int64_t prefix_matches = 0;            // all prefix hits, before checksum filtering
  std::vector<std::uint64_t> confirmed;       // addresses passing the checksum
};

struct ScanNotes {
  std::vector<std::string> skipped_regions;  // unreadable/failed regions, with reason
};

// Single pass over every readable region, all locators at once. Regions are
// read in 1 MiB chunks with a 7-byte overlap so prefixes straddling a chunk
// edge are still seen; matches never span region boundaries.
std::vector<LocatorScan> scan_many(ByteTarget& target, std::span<const Locator> locators,
                                   ScanNotes* notes = nullptr);

LocatorScan scan_for(ByteTarget& target, const std::array<std::uint8_t, 8>& prefix,
                     std::uint32_t length, std::uint64_t checksum, ScanNotes* notes = nullptr);

struct RegionReport {
  std::uint32_t layer = 0;
  std::uint32_t offset = 0;  // element offset within the layer
  std::uint64_t layer_address = 0;
  std::int64_t prefix_matches = 0;
  bool confirmed = false;
  bool already_patched = false;  // locator hit the patched bytes (rerun)
  std::int64_t bytes_written = 0;
  std::string note;
};

struct MatchReport {
  bool ok = false;        // every region confirmed and (unless dry-run) written
  bool aborted = false;   // all-or-nothing pre-check failed; nothing written
  bool dry_run = false;
  std::string abort_reason;
  std::vector<RegionReport> regions;
  std::vector<std::string> skipped_regions;
  std::int64_t total_bytes_written = 0;
};

// The live attack: locate every patched layer by prefix+checksum (original or
// already-patched bytes both count), then overwrite each region's elements.
// No byte is written unless every layer has exactly one confirmed match.
MatchReport live_patch(ByteTarget& target, const PatchFile& patch, bool dry_run = false);
MatchReport live_patch_pid(int pid, const PatchFile& patch, bool dry_run = false);

}  // namespace ltnn
