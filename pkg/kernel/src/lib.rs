//! Accelerated range-coder kernel, byte-identical to the pure Python coder
//! shipped in the `crossir` package (`crossir.coder`).
//!
//! The kernel is stateless and reentrant: every call parses the CDF blob it
//! is handed, runs the coding loop on stack-local state, and returns. Errors
//! cross the boundary as integer status codes; the library never panics
//! through the FFI layer and never touches memory outside the buffers the
//! caller provides. The exact C signatures live in
//! `include/crossir_kernel.h`.
//!
//! Arithmetic model: the Python coder runs on unbounded integers and masks to
//! 32 bits only at specific points of the renormalization loop. This port
//! keeps the coder state in 128-bit signed integers, which are wide enough
//! that no intermediate ever wraps for any well-formed table set, and applies
//! the same masks at the same points, so the emitted bytes match the Python
//! implementation bit for bit. A magnitude valve rejects degenerate table
//! sets (frequencies far above the 2^16 total) that would make the unbounded
//! Python state grow without limit.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

pub const ABI_VERSION: u32 = 1;

pub const STATUS_OK: i32 = 0;
pub const STATUS_BAD_ARGUMENT: i32 = 1;
pub const STATUS_BAD_BLOB: i32 = 2;
pub const STATUS_INDEX_RANGE: i32 = 3;
pub const STATUS_TRUNCATED: i32 = 4;
pub const STATUS_CORRUPT_STREAM: i32 = 5;
pub const STATUS_PREFIX_TOO_LONG: i32 = 6;
pub const STATUS_TRAILING_BYTES: i32 = 7;
pub const STATUS_OUTPUT_TOO_SMALL: i32 = 8;
pub const STATUS_SYMBOL_RANGE: i32 = 9;
pub const STATUS_INTERNAL: i32 = 10;

const CDF_TOTAL: i128 = 1 << 16;
const TOP: i128 = 1 << 24;
const BOT: i128 = 1 << 16;
const MASK32: i128 = 0xFFFF_FFFF;

/// Coder state above this magnitude is only reachable through table sets
/// whose frequencies are wildly inconsistent with the 2^16 total; bail out
/// instead of chasing the Python big-int behaviour into the stratosphere.
const STATE_VALVE: i128 = 1 << 96;

type Status = i32;

// ---------------------------------------------------------------------------
// CDF tables
// ---------------------------------------------------------------------------

/// One quantized CDF. Regular symbols span [offset, offset+n-2]; the last
/// slot is the escape symbol. Mirrors `crossir.coder.CdfTable`.
#[derive(Debug)]
struct CdfTable {
    offset: i64,
    cdf: Vec<u32>,
}

impl CdfTable {
    fn num_symbols(&self) -> i64 {
        self.cdf.len() as i64 - 1
    }

    fn escape_index(&self) -> i64 {
        self.num_symbols() - 1
    }

    fn max_regular(&self) -> i64 {
        self.offset + self.num_symbols() - 2
    }

    /// Python-style list indexing (negative wraps once); out of range is a
    /// corrupt-stream condition rather than a panic.
    fn entry(&self, i: i64) -> Result<i128, Status> {
        let n = self.cdf.len() as i64;
        let j = if i < 0 { n + i } else { i };
        if j < 0 || j >= n {
            return Err(STATUS_CORRUPT_STREAM);
        }
        Ok(self.cdf[j as usize] as i128)
    }
}

/// Parse the little-endian table blob shared with the Python side:
/// u32 table count, then per table an i32 symbol offset, a u32 entry count
/// and the u32 CDF entries.
fn parse_blob(blob: &[u8]) -> Result<Vec<CdfTable>, Status> {
    fn u32_at(b: &[u8], pos: usize) -> Result<u32, Status> {
        let end = pos.checked_add(4).ok_or(STATUS_BAD_BLOB)?;
        if end > b.len() {
            return Err(STATUS_BAD_BLOB);
        }
        Ok(u32::from_le_bytes([b[pos], b[pos + 1], b[pos + 2], b[pos + 3]]))
    }

    let n = u32_at(blob, 0)? as usize;
    let mut pos = 4usize;
    let mut tables = Vec::with_capacity(n.min(4096));
    for _ in 0..n {
        let offset = u32_at(blob, pos)? as i32 as i64;
        let count = u32_at(blob, pos + 4)? as usize;
        pos += 8;
        let end = pos
            .checked_add(count.checked_mul(4).ok_or(STATUS_BAD_BLOB)?)
            .ok_or(STATUS_BAD_BLOB)?;
        if end > blob.len() {
            return Err(STATUS_BAD_BLOB);
        }
        // A coding table needs at least one regular symbol plus the escape
        // slot; anything shorter cannot be walked safely.
        if count < 2 {
            return Err(STATUS_BAD_BLOB);
        }
        let mut cdf = Vec::with_capacity(count);
        for k in 0..count {
            cdf.push(u32_at(blob, pos + 4 * k)?);
        }
        pos = end;
        tables.push(CdfTable { offset, cdf });
    }
    if pos != blob.len() {
        return Err(STATUS_BAD_BLOB);
    }
    Ok(tables)
}

/// Exact port of CPython's bisect_right on a u32 array.
fn bisect_right(a: &[u32], x: i128) -> i64 {
    let mut lo = 0usize;
    let mut hi = a.len();
    while lo < hi {
        let mid = (lo + hi) / 2;
        if x < a[mid] as i128 {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    lo as i64
}

// ---------------------------------------------------------------------------
// Range coder
// ---------------------------------------------------------------------------

/// Carry-less 32-bit range encoder writing into a caller-owned buffer.
struct RangeEncoder<'a> {
    low: i128,
    rng: i128,
    out: &'a mut [u8],
    len: usize,
}

impl<'a> RangeEncoder<'a> {
    fn new(out: &'a mut [u8]) -> Self {
        RangeEncoder { low: 0, rng: MASK32, out, len: 0 }
    }

    fn push(&mut self, byte: u8) -> Result<(), Status> {
        if self.len >= self.out.len() {
            return Err(STATUS_OUTPUT_TOO_SMALL);
        }
        self.out[self.len] = byte;
        self.len += 1;
        Ok(())
    }

    fn encode(&mut self, cum: i128, freq: i128) -> Result<(), Status> {
        let r = self.rng >> 16;
        self.low += cum * r;
        self.rng = freq * r;
        if self.low.abs() > STATE_VALVE || self.rng.abs() > STATE_VALVE {
            return Err(STATUS_CORRUPT_STREAM);
        }
        self.normalize()
    }

    fn encode_bit(&mut self, bit: i128) -> Result<(), Status> {
        self.encode(if bit != 0 { 0x8000 } else { 0 }, 0x8000)
    }

    fn normalize(&mut self) -> Result<(), Status> {
        let mut low = self.low;
        let mut rng = self.rng;
        loop {
            if (low ^ (low + rng)) < TOP {
                // top byte settled, emit it
            } else if rng < BOT {
                rng = (-low) & (BOT - 1);
            } else {
                break;
            }
            self.push(((low >> 24) & 0xFF) as u8)?;
            low = (low << 8) & MASK32;
            rng = (rng << 8) & MASK32;
        }
        self.low = low;
        self.rng = rng;
        Ok(())
    }

    fn finish(mut self) -> Result<usize, Status> {
        let mut low = self.low;
        for _ in 0..4 {
            self.push(((low >> 24) & 0xFF) as u8)?;
            low = (low << 8) & MASK32;
        }
        Ok(self.len)
    }
}

/// Exact inverse of RangeEncoder over a caller-owned byte slice.
struct RangeDecoder<'a> {
    buf: &'a [u8],
    pos: usize,
    low: i128,
    rng: i128,
    code: i128,
}

impl<'a> RangeDecoder<'a> {
    fn new(buf: &'a [u8]) -> Result<Self, Status> {
        let mut dec = RangeDecoder { buf, pos: 0, low: 0, rng: MASK32, code: 0 };
        let mut code: i128 = 0;
        for _ in 0..4 {
            code = (code << 8) | dec.next_byte()?;
        }
        dec.code = code;
        Ok(dec)
    }

    fn next_byte(&mut self) -> Result<i128, Status> {
        if self.pos >= self.buf.len() {
            return Err(STATUS_TRUNCATED);
        }
        let b = self.buf[self.pos];
        self.pos += 1;
        Ok(b as i128)
    }

    fn decode(&mut self, table: &CdfTable) -> Result<i64, Status> {
        let r = self.rng >> 16;
        if r <= 0 {
            return Err(STATUS_CORRUPT_STREAM);
        }
        // div_euclid matches Python floor division for a positive divisor
        let dv = (self.code - self.low).div_euclid(r);
        if dv >= CDF_TOTAL {
            return Err(STATUS_CORRUPT_STREAM);
        }
        let sym = bisect_right(&table.cdf, dv) - 1;
        let cum = table.entry(sym)?;
        let nxt = table.entry(sym + 1)?;
        self.update(cum, nxt - cum, r)?;
        Ok(sym)
    }

    fn decode_bit(&mut self) -> Result<i128, Status> {
        let r = self.rng >> 16;
        if r <= 0 {
            return Err(STATUS_CORRUPT_STREAM);
        }
        let dv = (self.code - self.low).div_euclid(r);
        let bit: i128 = if dv >= 0x8000 { 1 } else { 0 };
        self.update(if bit != 0 { 0x8000 } else { 0 }, 0x8000, r)?;
        Ok(bit)
    }

    fn update(&mut self, cum: i128, freq: i128, r: i128) -> Result<(), Status> {
        self.low += cum * r;
        self.rng = freq * r;
        if self.low.abs() > STATE_VALVE || self.rng.abs() > STATE_VALVE {
            return Err(STATUS_CORRUPT_STREAM);
        }
        let mut low = self.low;
        let mut rng = self.rng;
        let mut code = self.code;
        loop {
            if (low ^ (low + rng)) < TOP {
                // top byte settled, pull the next one
            } else if rng < BOT {
                rng = (-low) & (BOT - 1);
            } else {
                break;
            }
            code = ((code << 8) | self.next_byte()?) & MASK32;
            low = (low << 8) & MASK32;
            rng = (rng << 8) & MASK32;
        }
        self.low = low;
        self.rng = rng;
        self.code = code;
        Ok(())
    }

    fn decode_escape_magnitude(&mut self) -> Result<i128, Status> {
        let mut k = 0u32;
        while self.decode_bit()? == 0 {
            k += 1;
            if k > 48 {
                return Err(STATUS_PREFIX_TOO_LONG);
            }
        }
        let mut m: i128 = 1;
        for _ in 0..k {
            m = (m << 1) | self.decode_bit()?;
        }
        Ok(m)
    }
}

fn encode_escape_magnitude(enc: &mut RangeEncoder, m: i128) -> Result<(), Status> {
    // Exp-Golomb: bit_length(m)-1 zeros, then m MSB-first. m is always >= 1.
    let k = 127 - m.leading_zeros();
    for _ in 0..k {
        enc.encode_bit(0)?;
    }
    for i in (0..=k).rev() {
        enc.encode_bit((m >> i) & 1)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Symbol-level entry points
// ---------------------------------------------------------------------------

fn encode_symbols_core(
    symbols: &[i64],
    indexes: &[i64],
    tables: &[CdfTable],
    out: &mut [u8],
) -> Result<usize, Status> {
    // Index validation happens before any byte is produced, like the Python
    // implementation's upfront min/max check.
    for &ti in indexes {
        if ti < 0 || ti as usize >= tables.len() {
            return Err(STATUS_INDEX_RANGE);
        }
    }
    let mut enc = RangeEncoder::new(out);
    for (&s, &ti) in symbols.iter().zip(indexes.iter()) {
        let t = &tables[ti as usize];
        let s = s as i128;
        let rel = s - t.offset as i128;
        if rel >= 0 && rel < t.num_symbols() as i128 - 1 {
            let rel = rel as usize;
            let cum = t.cdf[rel] as i128;
            let nxt = t.cdf[rel + 1] as i128;
            enc.encode(cum, nxt - cum)?;
        } else {
            let esc = t.escape_index() as usize;
            let cum = t.cdf[esc] as i128;
            let nxt = t.cdf[esc + 1] as i128;
            enc.encode(cum, nxt - cum)?;
            if s > t.max_regular() as i128 {
                enc.encode_bit(0)?;
                encode_escape_magnitude(&mut enc, s - t.max_regular() as i128)?;
            } else {
                enc.encode_bit(1)?;
                encode_escape_magnitude(&mut enc, t.offset as i128 - s)?;
            }
        }
    }
    enc.finish()
}

fn decode_symbols_core(
    data: &[u8],
    indexes: &[i64],
    tables: &[CdfTable],
    out: &mut [i32],
    consumed: &mut usize,
) -> Result<(), Status> {
    let mut dec = RangeDecoder::new(data)?;
    *consumed = dec.pos;
    let n_tables = tables.len() as i64;
    for (slot, &ti) in out.iter_mut().zip(indexes.iter()) {
        // Negative table indexes wrap once, matching Python list semantics.
        let tj = if ti < 0 { n_tables + ti } else { ti };
        if tj < 0 || tj >= n_tables {
            return Err(STATUS_INDEX_RANGE);
        }
        let t = &tables[tj as usize];
        let sym = dec.decode(t).map_err(|e| {
            *consumed = dec.pos;
            e
        })?;
        let val: i128 = if sym == t.escape_index() {
            let sign = dec.decode_bit().map_err(|e| {
                *consumed = dec.pos;
                e
            })?;
            let m = dec.decode_escape_magnitude().map_err(|e| {
                *consumed = dec.pos;
                e
            })?;
            if sign != 0 {
                t.offset as i128 - m
            } else {
                t.max_regular() as i128 + m
            }
        } else {
            t.offset as i128 + sym as i128
        };
        if val < i32::MIN as i128 || val > i32::MAX as i128 {
            *consumed = dec.pos;
            return Err(STATUS_SYMBOL_RANGE);
        }
        *slot = val as i32;
        *consumed = dec.pos;
    }
    if dec.pos != data.len() {
        return Err(STATUS_TRAILING_BYTES);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// C ABI
// ---------------------------------------------------------------------------

unsafe fn slice_or_empty<'a, T>(ptr: *const T, count: u64) -> Result<&'a [T], Status> {
    if count == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(STATUS_BAD_ARGUMENT);
    }
    Ok(slice::from_raw_parts(ptr, count as usize))
}

unsafe fn slice_mut_or_empty<'a, T>(ptr: *mut T, count: u64) -> Result<&'a mut [T], Status> {
    if count == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(STATUS_BAD_ARGUMENT);
    }
    Ok(slice::from_raw_parts_mut(ptr, count as usize))
}

/// ABI version of this library; the host refuses to bind a mismatch.
#[no_mangle]
pub extern "C" fn crossir_kernel_abi_version() -> u32 {
    ABI_VERSION
}

/// Range-encode `count` integer symbols, each under the CDF picked by its
/// index. Writes at most `out_cap` bytes into `out` and stores the number of
/// bytes produced in `out_len`. Returns a CROSSIR_STATUS_* code.
#[no_mangle]
pub unsafe extern "C" fn crossir_encode_symbols(
    symbols: *const i64,
    indexes: *const i64,
    count: u64,
    cdf_blob: *const u8,
    blob_len: u64,
    out: *mut u8,
    out_cap: u64,
    out_len: *mut u64,
) -> i32 {
    if out_len.is_null() {
        return STATUS_BAD_ARGUMENT;
    }
    *out_len = 0;
    let result = catch_unwind(AssertUnwindSafe(|| -> Result<usize, Status> {
        let symbols = slice_or_empty(symbols, count)?;
        let indexes = slice_or_empty(indexes, count)?;
        let blob = slice_or_empty(cdf_blob, blob_len)?;
        let out = slice_mut_or_empty(out, out_cap)?;
        let tables = parse_blob(blob)?;
        encode_symbols_core(symbols, indexes, &tables, out)
    }));
    match result {
        Ok(Ok(n)) => {
            *out_len = n as u64;
            STATUS_OK
        }
        Ok(Err(status)) => status,
        Err(_) => STATUS_INTERNAL,
    }
}

/// Exact inverse of crossir_encode_symbols. Decodes `count` symbols into
/// `out_symbols` (int32) and stores the number of input bytes consumed in
/// `consumed`; the whole stream must be consumed exactly. Returns a
/// CROSSIR_STATUS_* code.
#[no_mangle]
pub unsafe extern "C" fn crossir_decode_symbols(
    data: *const u8,
    data_len: u64,
    indexes: *const i64,
    count: u64,
    cdf_blob: *const u8,
    blob_len: u64,
    out_symbols: *mut i32,
    consumed: *mut u64,
) -> i32 {
    if consumed.is_null() {
        return STATUS_BAD_ARGUMENT;
    }
    *consumed = 0;
    let mut used = 0usize;
    let result = catch_unwind(AssertUnwindSafe(|| -> Result<(), Status> {
        let data = slice_or_empty(data, data_len)?;
        let indexes = slice_or_empty(indexes, count)?;
        let blob = slice_or_empty(cdf_blob, blob_len)?;
        let out = slice_mut_or_empty(out_symbols, count)?;
        let tables = parse_blob(blob)?;
        decode_symbols_core(data, indexes, &tables, out, &mut used)
    }));
    *consumed = used as u64;
    match result {
        Ok(Ok(())) => STATUS_OK,
        Ok(Err(status)) => status,
        Err(_) => STATUS_INTERNAL,
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    /// Tiny three-symbol table: regular symbols -1 and 0, escape elsewhere.
    fn test_blob() -> Vec<u8> {
        let mut blob = Vec::new();
        blob.extend_from_slice(&1u32.to_le_bytes());
        blob.extend_from_slice(&(-1i32).to_le_bytes());
        let cdf: [u32; 4] = [0, 30000, 60000, 65536];
        blob.extend_from_slice(&(cdf.len() as u32).to_le_bytes());
        for v in cdf {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        blob
    }

    fn roundtrip(symbols: &[i64]) -> Vec<i32> {
        let blob = test_blob();
        let tables = parse_blob(&blob).unwrap();
        let indexes = vec![0i64; symbols.len()];
        let mut buf = vec![0u8; symbols.len() * 18 + 64];
        let n = encode_symbols_core(symbols, &indexes, &tables, &mut buf).unwrap();
        let mut out = vec![0i32; symbols.len()];
        let mut used = 0;
        decode_symbols_core(&buf[..n], &indexes, &tables, &mut out, &mut used).unwrap();
        assert_eq!(used, n);
        out
    }

    #[test]
    fn roundtrip_regular_and_escape() {
        let symbols = [-1i64, 0, 0, -1, 7, -13, 0, 500, -1, -70000];
        let decoded = roundtrip(&symbols);
        let expected: Vec<i32> = symbols.iter().map(|&s| s as i32).collect();
        assert_eq!(decoded, expected);
    }

    #[test]
    fn roundtrip_empty_is_four_zero_bytes() {
        let blob = test_blob();
        let tables = parse_blob(&blob).unwrap();
        let mut buf = vec![0u8; 64];
        let n = encode_symbols_core(&[], &[], &tables, &mut buf).unwrap();
        assert_eq!(&buf[..n], &[0, 0, 0, 0]);
        let mut used = 0;
        decode_symbols_core(&buf[..n], &[], &tables, &mut [], &mut used).unwrap();
        assert_eq!(used, 4);
    }

    #[test]
    fn empty_stream_is_truncated() {
        let blob = test_blob();
        let tables = parse_blob(&blob).unwrap();
        let mut used = 0;
        let err = decode_symbols_core(&[], &[], &tables, &mut [], &mut used).unwrap_err();
        assert_eq!(err, STATUS_TRUNCATED);
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let blob = test_blob();
        let tables = parse_blob(&blob).unwrap();
        let symbols = [0i64, -1, 0];
        let indexes = [0i64; 3];
        let mut buf = vec![0u8; 128];
        let n = encode_symbols_core(&symbols, &indexes, &tables, &mut buf).unwrap();
        let mut stream = buf[..n].to_vec();
        stream.push(0xAB);
        let mut out = [0i32; 3];
        let mut used = 0;
        let err = decode_symbols_core(&stream, &indexes, &tables, &mut out, &mut used).unwrap_err();
        assert_eq!(err, STATUS_TRAILING_BYTES);
    }

    #[test]
    fn bad_blob_is_rejected() {
        assert_eq!(parse_blob(&[1, 0]).unwrap_err(), STATUS_BAD_BLOB);
        let mut blob = test_blob();
        blob.push(0); // trailing byte
        assert_eq!(parse_blob(&blob).unwrap_err(), STATUS_BAD_BLOB);
    }

    #[test]
    fn index_out_of_range() {
        let blob = test_blob();
        let tables = parse_blob(&blob).unwrap();
        let mut buf = vec![0u8; 64];
        let err = encode_symbols_core(&[0], &[3], &tables, &mut buf).unwrap_err();
        assert_eq!(err, STATUS_INDEX_RANGE);
    }
}
