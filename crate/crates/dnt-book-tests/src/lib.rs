//! Compiles and runs every code snippet in the guide as a doc-test, so the
//! book cannot drift from the library.
