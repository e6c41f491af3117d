//! Resident-set-size measurement of a process tree via /proc.
//!
//! Frameworks fork executor processes, so measuring only the root would
//! miss most of the footprint; each sample walks the parent-pid graph and
//! sums VmRSS over the root and all its descendants. Processes that exit
//! mid-scan are skipped.

use std::collections::BTreeMap;
use std::fs;

/// Summed resident memory of `root` and every live descendant, in bytes.
/// Returns 0 when the root is already gone.
pub fn process_tree_rss_bytes(root: u32) -> u64 {
    let mut children: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    let Ok(entries) = fs::read_dir("/proc") else { return 0 };
    let mut pids = Vec::new();
    for entry in entries.flatten() {
        let name = entry.file_name();
        let Some(pid) = name.to_str().and_then(|s| s.parse::<u32>().ok()) else { continue };
        if let Some(ppid) = parent_pid(pid) {
            children.entry(ppid).or_default().push(pid);
            pids.push(pid);
        }
    }

    let mut total = 0u64;
    let mut queue = vec![root];
    let mut seen = std::collections::BTreeSet::new();
    while let Some(pid) = queue.pop() {
        if !seen.insert(pid) {
            continue;
        }
        total += rss_bytes(pid).unwrap_or(0);
        if let Some(kids) = children.get(&pid) {
            queue.extend(kids.iter().copied());
        }
    }
    total
}

/// Parses the ppid (field 4) out of /proc/<pid>/stat. The comm field can
/// contain spaces and parentheses, so fields are taken after the last ')'.
fn parent_pid(pid: u32) -> Option<u32> {
    let stat = fs::read_to_string(format!("/proc/{pid}/stat")).ok()?;
    let rest = &stat[stat.rfind(')')? + 1..];
    rest.split_whitespace().nth(1)?.parse().ok()
}

/// VmRSS of one pid in bytes, from /proc/<pid>/status.
fn rss_bytes(pid: u32) -> Option<u64> {
    let status = fs::read_to_string(format!("/proc/{pid}/status")).ok()?;
    for line in status.lines() {
        if let Some(rest) = line.strip_prefix("VmRSS:") {
            let kb: u64 = rest.trim().trim_end_matches("kB").trim().parse().ok()?;
            return Some(kb * 1024);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn own_process_has_resident_memory() {
        let rss = process_tree_rss_bytes(std::process::id());
        assert!(rss > 1024 * 1024, "own RSS {rss} implausibly small");
    }

    #[test]
    fn dead_pid_reads_as_zero() {
        // PID 4_000_000 is outside the container's pid_max.
        assert_eq!(process_tree_rss_bytes(4_000_000), 0);
    }

    #[test]
    fn shell_child_is_attributed_to_parent_tree() {
        use std::process::{Command, Stdio};
        // A shell whose child sleeps: the tree sum must cover both.
        let mut child = Command::new("/bin/sh")
            .args(["-c", "sleep 0.8"])
            .stdout(Stdio::null())
            .spawn()
            .unwrap();
        std::thread::sleep(std::time::Duration::from_millis(300));
        let rss = process_tree_rss_bytes(child.id());
        assert!(rss > 0, "tree RSS should be positive while the shell runs");
        child.wait().unwrap();
    }
}
