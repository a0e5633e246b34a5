//! SIGINT handling: flips a flag the training loop polls so an interrupted
//! run still writes a resumable checkpoint.

use std::sync::atomic::AtomicBool;

pub static STOP: AtomicBool = AtomicBool::new(false);

#[cfg(unix)]
pub fn install() {
    extern "C" fn handle(_: libc::c_int) {
        STOP.store(true, std::sync::atomic::Ordering::SeqCst);
    }
    let handler: extern "C" fn(libc::c_int) = handle;
    unsafe {
        libc::signal(libc::SIGINT, handler as libc::sighandler_t);
    }
}

#[cfg(not(unix))]
pub fn install() {}
