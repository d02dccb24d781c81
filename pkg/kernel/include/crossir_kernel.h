/* C boundary of the crossir accelerated range-coder kernel.
 *
 * The kernel is a stateless, reentrant mirror of the pure Python coder in
 * crossir.coder: given the same symbols, scale indexes and serialized CDF
 * table blob it produces byte-identical streams, and decodes byte-identical
 * symbol arrays. All memory is caller-owned; the kernel allocates nothing
 * that outlives a call and never writes outside the buffers it is handed.
 *
 * CDF blob wire format (little-endian, shared with CdfTableSet.serialize):
 *   u32  table_count
 *   repeated table_count times:
 *     i32  symbol offset of the first regular symbol
 *     u32  entry_count (CDF length; symbol count is entry_count - 1,
 *          the last symbol slot is the escape symbol)
 *     u32  cdf[entry_count]   (first 0, last 65536, strictly increasing)
 *
 * Per-symbol coding: a symbol s under table t is regular when
 * t.offset <= s <= t.offset + entry_count - 3; otherwise the escape slot is
 * coded, then a sign bit (0 = above the regular range, 1 = below), then the
 * magnitude in Exp-Golomb. Encoding finishes with a 4-byte flush; decoding
 * validates that the stream is consumed exactly.
 *
 * Mean values never cross this boundary: symbols arrive already
 * mean-centred, so means cannot change a single output byte. The host-side
 * wrapper validates their length and drops them.
 */

#ifndef CROSSIR_KERNEL_H
#define CROSSIR_KERNEL_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes returned by every entry point. */
#define CROSSIR_STATUS_OK 0
/* A required pointer was NULL or an argument combination is unusable. */
#define CROSSIR_STATUS_BAD_ARGUMENT 1
/* The CDF blob does not parse (short, truncated, trailing bytes, or a
 * table with fewer than two CDF entries). */
#define CROSSIR_STATUS_BAD_BLOB 2
/* A scale index does not select any table. */
#define CROSSIR_STATUS_INDEX_RANGE 3
/* The bitstream ended before all symbols were decoded. */
#define CROSSIR_STATUS_TRUNCATED 4
/* The bitstream decodes to an impossible coder state (cumulative frequency
 * out of range, or a degenerate table drove the coder out of bounds). */
#define CROSSIR_STATUS_CORRUPT_STREAM 5
/* An escape magnitude prefix exceeded 48 bits. */
#define CROSSIR_STATUS_PREFIX_TOO_LONG 6
/* Decoding finished but input bytes were left over. */
#define CROSSIR_STATUS_TRAILING_BYTES 7
/* The encoder output buffer is too small (never happens with the
 * 18*count + 64 byte bound for well-formed tables). */
#define CROSSIR_STATUS_OUTPUT_TOO_SMALL 8
/* A decoded symbol does not fit in int32. */
#define CROSSIR_STATUS_SYMBOL_RANGE 9
/* Internal fault; never expected, reported instead of unwinding. */
#define CROSSIR_STATUS_INTERNAL 10

/* ABI version of the loaded library. Hosts must check this equals 1. */
uint32_t crossir_kernel_abi_version(void);

/* Range-encode count symbols.
 *
 * symbols   int64 symbol values, length count
 * indexes   int64 table indexes, length count (validated before coding)
 * cdf_blob  serialized table set, blob_len bytes
 * out       caller buffer of out_cap bytes
 * out_len   receives the number of bytes written on success
 *
 * 18*count + 64 bytes of capacity is always enough for well-formed tables.
 * Returns CROSSIR_STATUS_OK (0) or an error status; on error out_len is 0
 * and the contents of out are unspecified.
 */
int32_t crossir_encode_symbols(
    const int64_t *symbols,
    const int64_t *indexes,
    uint64_t count,
    const uint8_t *cdf_blob,
    uint64_t blob_len,
    uint8_t *out,
    uint64_t out_cap,
    uint64_t *out_len);

/* Decode count symbols; the exact inverse of crossir_encode_symbols.
 *
 * data         encoded stream, data_len bytes
 * indexes      int64 table indexes, length count
 * cdf_blob     serialized table set, blob_len bytes
 * out_symbols  receives count int32 symbols on success
 * consumed     receives the number of input bytes consumed (also on error,
 *              so the host can report trailing-byte counts)
 *
 * The stream must be consumed exactly: leftover bytes yield
 * CROSSIR_STATUS_TRAILING_BYTES, running out of bytes yields
 * CROSSIR_STATUS_TRUNCATED. Returns CROSSIR_STATUS_OK (0) or an error
 * status; on error the contents of out_symbols are unspecified.
 */
int32_t crossir_decode_symbols(
    const uint8_t *data,
    uint64_t data_len,
    const int64_t *indexes,
    uint64_t count,
    const uint8_t *cdf_blob,
    uint64_t blob_len,
    int32_t *out_symbols,
    uint64_t *consumed);

#ifdef __cplusplus
}
#endif

#endif /* CROSSIR_KERNEL_H */
