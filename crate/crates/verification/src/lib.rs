//! Holds the `acceptance` test target, which runs every acceptance criterion
//! against the other workspace crates and prints one PASS/FAIL line each.
