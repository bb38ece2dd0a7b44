#pragma once

// Checksummed little-endian containers for volumes and fields, network
// checkpoints, and a minimal NIfTI-1 reader. Layouts are described in
// docs/formats.md.

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "groupflow/field.hpp"
#include "groupflow/siren.hpp"

namespace groupflow {

enum class ContainerKind : std::uint32_t { Volume = 1, Labels = 2, Displacement = 3, LieCoefficients = 4 };
enum class ElementType : std::uint32_t { F32 = 1, F64 = 2, U16 = 3 };

struct ContainerHeader {
  std::uint32_t version = 1;
  ContainerKind kind = ContainerKind::Volume;
  ElementType element = ElementType::F64;
  std::uint32_t channels = 1;
  std::uint32_t group = 0xFFFFFFFFu;  // GroupKind for Lie fields
  bool has_mask = false;
  GridGeometry geom;
};

/// Header of a container file without reading the payload.
ContainerHeader read_container_header(const std::filesystem::path& path);

/// Volumes are written as f64 by default; f32 is lossy and only offered for
/// compact exports. Readers accept both.
void write_volume(const std::filesystem::path& path, const Volume& v, ElementType element = ElementType::F64);
Volume read_volume(const std::filesystem::path& path);
void write_labels(const std::filesystem::path& path, const LabelVolume& v);
LabelVolume read_labels(const std::filesystem::path& path);
void write_dispfield(const std::filesystem::path& path, const DispField& f);
DispField read_dispfield(const std::filesystem::path& path);
void write_liefield(const std::filesystem::path& path, const LieCoeffField& f);
LieCoeffField read_liefield(const std::filesystem::path& path);

void write_checkpoint(const std::filesystem::path& path, const SirenParams& p);
SirenParams read_checkpoint(const std::filesystem::path& path);

/// Minimal NIfTI-1 ingestion (.nii, optionally gzip-compressed). Scalar
/// uint8/int16/uint16/float32 data with up to three spatial dimensions.
/// Integer data can be read as labels.
Volume read_nifti_volume(const std::filesystem::path& path);
LabelVolume read_nifti_labels(const std::filesystem::path& path);

/// Raw bytes of a file, reading gzip transparently when asked.
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path, bool decompress_gzip = false);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
void write_text_file(const std::filesystem::path& path, const std::string& text);

std::uint32_t crc32_bytes(const std::uint8_t* data, std::size_t size);
/// CRC-32 of a whole file. A container ends with the CRC of its body, so its
/// whole-file CRC is the constant CRC residue; manifests use Adler-32.
std::uint32_t file_crc32(const std::filesystem::path& path);
std::uint32_t file_adler32(const std::filesystem::path& path);
std::string hex32(std::uint32_t v);

}  // namespace groupflow
