//! Synthetic labeled commands and synthetic scripts.
//!
//! Every labeled command comes from a template family with a fixed gold
//! label. Families cover listings, searches, service management, scoped and
//! recursive deletions, piped deletions and kill chains, including the
//! quoting and wrapper pitfalls where a small change flips the risk
//! (`echo 'kill 1'` versus ``echo `kill 1` ``, `time ls` versus
//! `time kill -9 1`). Scripts are built from the same families around a
//! shared set of entities (service, directories, process) so consecutive
//! commands are related.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{DatasetError, LabeledCommand, Provenance};
use crate::risk::RiskClass;

/// Default class proportions (SAFE, RISKY, BLOCKED).
pub const DEFAULT_RATIOS: [f64; 3] = [0.797, 0.200, 0.003];

const SERVICES: &[&str] = &[
    "nginx", "billing", "postgresql", "redis", "kafka", "auth-api", "gateway", "zookeeper", "cron", "sshd",
    "docker", "kubelet", "haproxy", "rabbitmq", "elasticsearch", "payments", "inventory", "mysql", "memcached",
    "etcd", "ntpd", "rsyslog", "consul", "vault", "prometheus", "grafana", "jenkins", "tomcat", "mongod", "search-api",
];
const APPS: &[&str] = &[
    "billing", "orders", "auth", "catalog", "reports", "ingest", "search", "media", "ledger", "notify", "metrics",
    "gateway", "checkout", "profile", "storage", "scheduler", "export", "webshop", "crm", "backup",
];
const USERS: &[&str] = &["deploy", "ops", "admin", "jenkins", "svc_app", "alice", "bob", "carol", "www-data", "backup"];
const WORDS: &[&str] = &[
    "error", "timeout", "refused", "WARN", "OutOfMemory", "failed", "denied", "panic", "exception", "latency",
    "retry", "disconnect", "segfault", "oom", "503", "TODO", "deprecated", "critical", "fatal", "slow",
];
const SYSTEM_DIRS: &[&str] = &[
    "/bin", "/sbin", "/usr/bin", "/usr/sbin", "/usr/lib", "/lib", "/lib64", "/boot", "/etc", "/usr", "/var",
];
const DISKS: &[&str] = &["sda", "sdb", "nvme0n1", "vda", "xvda", "sdc", "md0", "dm-0"];
const EXTENSIONS: &[&str] = &["txt", "json", "yaml", "conf", "csv", "dat", "xml", "ini", "cfg", "env", "sql", "pem"];
const PACKAGES: &[&str] = &["curl", "openssl", "python3", "nodejs", "libssl", "vim", "git", "htop", "jq", "nginx", "java-11"];
const NAMESPACES: &[&str] = &["default", "prod", "staging", "kube-system", "payments", "monitoring", "batch", "edge"];
const IFACES: &[&str] = &["eth0", "eth1", "ens3", "bond0", "eno1", "wlan0"];
const VARS: &[&str] = &["DELETE_LIST", "FILES", "TARGETS", "OLD_LOGS", "CLEANUP", "STALE"];

/// Entities a command (or a whole script) refers to.
#[derive(Debug, Clone)]
pub struct Context {
    pub service: String,
    pub app: String,
    pub app_dir: String,
    pub log_dir: String,
    pub log_file: String,
    pub data_file: String,
    pub user: String,
    pub host: String,
    pub port: u16,
    pub pid: u32,
    pub namespace: String,
    pub pod: String,
    pub word: String,
    pub list_var: String,
}

fn pick<'a, R: Rng>(rng: &mut R, items: &[&'a str]) -> &'a str {
    items.choose(rng).expect("non-empty pool")
}

fn suffix<R: Rng>(rng: &mut R) -> String {
    match rng.gen_range(0..4) {
        0 => format!("{}", rng.gen_range(1..10_000)),
        1 => format!("{:x}", rng.gen_range(0x1000u32..0xffffff)),
        2 => format!("v{}.{}.{}", rng.gen_range(0..5), rng.gen_range(0..20), rng.gen_range(0..50)),
        _ => format!(
            "20{:02}-{:02}-{:02}",
            rng.gen_range(18..26),
            rng.gen_range(1..13),
            rng.gen_range(1..29)
        ),
    }
}

impl Context {
    pub fn random<R: Rng>(rng: &mut R) -> Context {
        let app = pick(rng, APPS).to_string();
        let app_dir = match rng.gen_range(0..6) {
            0 => format!("/opt/{app}"),
            1 => format!("/srv/{app}/releases/{}", suffix(rng)),
            2 => format!("/var/lib/{app}"),
            3 => format!("/home/{}/{app}", pick(rng, USERS)),
            4 => format!("/data/{app}/cache"),
            _ => format!("/tmp/{app}-{}", suffix(rng)),
        };
        let log_dir = match rng.gen_range(0..3) {
            0 => format!("/var/log/{app}"),
            1 => format!("{app_dir}/logs"),
            _ => "/var/log".to_string(),
        };
        let log_file = format!("{log_dir}/{app}-{}.log", suffix(rng));
        let data_file = format!("{app_dir}/{}_{}.{}", pick(rng, WORDS).to_lowercase(), suffix(rng), pick(rng, EXTENSIONS));
        let host = match rng.gen_range(0..3) {
            0 => format!("10.{}.{}.{}", rng.gen_range(0..256), rng.gen_range(0..256), rng.gen_range(1..255)),
            1 => format!("{app}-{}.internal", rng.gen_range(1..40)),
            _ => "localhost".to_string(),
        };
        let pod = format!("{app}-{:x}-{}", rng.gen_range(0x10000u32..0xfffff), rng.gen_range(100..999));
        Context {
            service: pick(rng, SERVICES).to_string(),
            app,
            app_dir,
            log_dir,
            log_file,
            data_file,
            user: pick(rng, USERS).to_string(),
            host,
            port: *[80u16, 443, 8080, 8443, 5432, 6379, 9092, 3000, 9200].choose(rng).unwrap(),
            pid: rng.gen_range(100..65_000),
            namespace: pick(rng, NAMESPACES).to_string(),
            pod,
            word: pick(rng, WORDS).to_string(),
            list_var: pick(rng, VARS).to_string(),
        }
    }
}

type Generator = fn(&Context, &mut ChaCha8Rng) -> String;

/// A template family with a fixed gold label.
pub struct Family {
    pub id: &'static str,
    pub label: RiskClass,
    generate: Generator,
}

impl Family {
    pub fn generate(&self, ctx: &Context, rng: &mut ChaCha8Rng) -> String {
        (self.generate)(ctx, rng)
    }
}

fn wrap_time(rng: &mut ChaCha8Rng, cmd: String) -> String {
    match rng.gen_range(0..10) {
        0 => format!("time {cmd}"),
        1 => format!("sudo {cmd}"),
        _ => cmd,
    }
}

fn gen_list(c: &Context, r: &mut ChaCha8Rng) -> String {
    let cmd = match r.gen_range(0..7) {
        0 => "ls".to_string(),
        1 => format!("ls -la {}", c.app_dir),
        2 => format!("ls -lh {}", c.log_dir),
        3 => format!("ls -ltr {}", c.log_dir),
        4 => format!("ls {}", c.app_dir),
        5 => format!("tree -L 2 {}", c.app_dir),
        _ => format!("ls -1 {} | wc -l", c.app_dir),
    };
    if r.gen_bool(0.15) {
        format!("time {cmd}")
    } else {
        cmd
    }
}

fn gen_grep(c: &Context, r: &mut ChaCha8Rng) -> String {
    match r.gen_range(0..7) {
        0 => format!("grep -rn \"{}\" {}", c.word, c.app_dir),
        1 => format!("grep -i {} {}", c.word, c.log_file),
        2 => format!("cat {} | grep {}", c.data_file, c.word),
        3 => format!("cat ${} | grep *.log", c.list_var),
        4 => format!("zgrep {} {}.gz", c.word, c.log_file),
        5 => format!("egrep \"{}|{}\" {}", c.word, pick(r, WORDS), c.log_file),
        _ => format!("grep -c {} {} | sort -n", c.word, c.log_file),
    }
}

fn gen_view(c: &Context, r: &mut ChaCha8Rng) -> String {
    match r.gen_range(0..8) {
        0 => format!("cat {}", c.data_file),
        1 => format!("tail -n {} {}", r.gen_range(10..500), c.log_file),
        2 => format!("tail -f {}", c.log_file),
        3 => format!("head -{} {}", r.gen_range(5..100), c.data_file),
        4 => format!("less {}", c.log_file),
        5 => format!("wc -l {}", c.log_file),
        6 => format!("stat {}", c.data_file),
        _ => format!("md5sum {}", c.data_file),
    }
}

fn gen_status(c: &Context, r: &mut ChaCha8Rng) -> String {
    match r.gen_range(0..5) {
        0 => format!("systemctl status {}", c.service),
        1 => format!("service {} status", c.service),
        2 => format!("journalctl -u {} -n {}", c.service, r.gen_range(20..300)),
        3 => format!("journalctl -u {} --since \"{} min ago\"", c.service, r.gen_range(5..120)),
        _ => format!("systemctl is-active {}", c.service),
    }
}

fn gen_sys(c: &Context, r: &mut ChaCha8Rng) -> String {
    let cmd = match r.gen_range(0..12) {
        0 => "df -h".to_string(),
        1 => format!("du -sh {}", c.app_dir),
        2 => "free -m".to_string(),
        3 => "uptime".to_string(),
        4 => "whoami".to_string(),
        5 => "hostname -f".to_string(),
        6 => "uname -a".to_string(),
        7 => "top -b -n 1 | head -20".to_string(),
        8 => format!("vmstat 1 {}", r.gen_range(2..10)),
        9 => "lsblk".to_string(),
        10 => format!("mount | grep {}", pick(r, DISKS)),
        _ => format!("id {}", c.user),
    };
    wrap_time(r, cmd)
}

fn gen_proc(c: &Context, r: &mut ChaCha8Rng) -> String {
    match r.gen_range(0..5) {
        0 => format!("ps aux | grep {}", c.service),
        1 => format!("ps -ef | grep {} | grep -v grep", c.service),
        2 => format!("pgrep -f {}", c.service),
        3 => format!("pidof {}", c.service),
        _ => format!("lsof -p {}", c.pid),
    }
}

fn gen_net(c: &Context, r: &mut ChaCha8Rng) -> String {
    match r.gen_range(0..7) {
        0 => format!("netstat -tulpn | grep {}", c.port),
        1 => "ss -ltnp".to_string(),
        2 => format!("ping -c {} {}", r.gen_range(1..6), c.host),
        3 => format!("curl -s http://{}:{}/health", c.host, c.port),
        4 => format!("dig {}", c.host),
        5 => format!("nc -zv {} {}", c.host, c.port),
        _ => "ip addr show".to_string(),
    }
}

fn gen_echo(c: &Context, r: &mut ChaCha8Rng) -> String {
    match r.gen_range(0..6) {
        0 => format!("echo \"checking {}\"", c.service),
        1 => format!("echo 'kill {}'", c.pid),
        2 => format!("echo 'rm -rf {}'", c.app_dir),
        3 => "echo $PATH".to_string(),
        4 => format!("printf \"%s\\n\" {}", c.word),
        _ => format!("echo \"{} done\" >> /tmp/{}.status", c.app, c.app),
    }
}

fn gen_nav(c: &Context, r: &mut ChaCha8Rng) -> String {
    match r.gen_range(0..5) {
        0 => format!("cd {}", c.app_dir),
        1 => "pwd".to_string(),
        2 => format!("history | tail -n {}", r.gen_range(10..100)),
        3 => format!("export APP_HOME={}", c.app_dir),
        _ => format!("which {}", c.service),
    }
}

fn gen_container_view(c: &Context, r: &mut ChaCha8Rng) -> String {
    match r.gen_range(0..6) {
        0 => "docker ps".to_string(),
        1 => format!("docker logs --tail {} {}", r.gen_range(10..500), c.app),
        2 => format!("docker inspect {}", c.app),
        3 => format!("kubectl get pods -n {}", c.namespace),
        4 => format!("kubectl describe pod {} -n {}", c.pod, c.namespace),
        _ => format!("kubectl logs {} -n {}", c.pod, c.namespace),
    }
}

fn gen_delete_log(c: &Context, r: &mut ChaCha8Rng) -> String {
    match r.gen_range(0..3) {
        0 => format!("rm {}", c.log_file),
        1 => format!(
            "rm {}-{:02}-{:02}_{:02}:{:02}:{:02}.log",
            r.gen_range(2019..2026),
            r.gen_range(1..13),
            r.gen_range(1..29),
            r.gen_range(0..24),
            r.gen_range(0..60),
            r.gen_range(0..60)
        ),
        _ => format!("rm ./{}-{}.log", c.app, suffix(r)),
    }
}

fn gen_copy(c: &Context, r: &mut ChaCha8Rng) -> String {
    match r.gen_range(0..5) {
        0 => format!("cp {} {}.bak", c.data_file, c.data_file),
        1 => format!("mkdir -p /tmp/{}-{}", c.app, suffix(r)),
        2 => format!("tar -czf /tmp/{}-{}.tar.gz {}", c.app, suffix(r), c.log_dir),
        3 => format!("touch /tmp/{}.lock", c.app),
        _ => format!("scp {} {}@{}:/tmp/", c.data_file, c.user, c.host),
    }
}

fn gen_git(c: &Context, r: &mut ChaCha8Rng) -> String {
    match r.gen_range(0..4) {
        0 => "git status".to_string(),
        1 => format!("git log --oneline -n {}", r.gen_range(3..30)),
        2 => format!("git diff {}", c.data_file),
        _ => "git fetch origin".to_string(),
    }
}

fn gen_find_view(c: &Context, r: &mut ChaCha8Rng) -> String {
    match r.gen_range(0..3) {
        0 => format!("find {} -name \"*.log\" -mtime +{}", c.log_dir, r.gen_range(1..60)),
        1 => format!("find {} -type f -size +{}M", c.app_dir, r.gen_range(1..500)),
        _ => format!("find {} -name \"*.{}\"", c.app_dir, pick(r, EXTENSIONS)),
    }
}

fn gen_restart(c: &Context, r: &mut ChaCha8Rng) -> String {
    let cmd = match r.gen_range(0..6) {
        0 => format!("systemctl restart {}", c.service),
        1 => format!("systemctl stop {}", c.service),
        2 => format!("service {} restart", c.service),
        3 => format!("systemctl disable {}", c.service),
        4 => format!("service {} stop", c.service),
        _ => format!("systemctl reload-or-restart {}", c.service),
    };
    wrap_time(r, cmd)
}

fn gen_kill(c: &Context, r: &mut ChaCha8Rng) -> String {
    match r.gen_range(0..11) {
        0 => format!("kill {}", c.pid),
        1 => format!("kill -9 {}", c.pid),
        2 => format!("time kill -9 {}", c.pid),
        3 => format!("kill -TERM {}", c.pid),
        4 => format!("pkill {}", c.service),
        5 => format!("pkill -9 -f {}", c.service),
        6 => format!("killall {}", c.service),
        7 => format!("kill $(pgrep {})", c.service),
        8 => format!("kill -9 `pidof {}`", c.service),
        9 => format!("echo `kill {}`", c.pid),
        _ => format!("ps aux | grep {} | awk '{{print $2}}' | xargs kill -9", c.service),
    }
}

fn gen_delete(c: &Context, r: &mut ChaCha8Rng) -> String {
    let cmd = match r.gen_range(0..7) {
        0 => format!("rm {}", c.data_file),
        1 => format!("rm -f {}", c.data_file),
        2 => format!("rm -rf {}", c.app_dir),
        3 => format!("rm -r {}/{}", c.app_dir, suffix(r)),
        4 => format!("rm -rf {}/*", c.app_dir),
        5 => format!("find {} -name \"*.tmp\" -delete", c.app_dir),
        _ => format!("find {} -mtime +{} -exec rm {{}} \\;", c.log_dir, r.gen_range(1..90)),
    };
    wrap_time(r, cmd)
}

fn gen_piped_delete(c: &Context, r: &mut ChaCha8Rng) -> String {
    match r.gen_range(0..5) {
        0 => format!("cat ${} | xargs -0 rm", c.list_var),
        1 => format!("cat ${} | xargs rm -f", c.list_var),
        2 => format!("ls {} | xargs rm -rf", c.app_dir),
        3 => format!("find {} -name \"*.bak\" | xargs rm", c.app_dir),
        _ => format!("cat {} | xargs -n 1 rm", c.data_file),
    }
}

fn gen_perm(c: &Context, r: &mut ChaCha8Rng) -> String {
    match r.gen_range(0..4) {
        0 => format!("chmod -R 777 {}", c.app_dir),
        1 => format!("chmod 600 {}", c.data_file),
        2 => format!("chown -R {}:{} {}", c.user, c.user, c.app_dir),
        _ => format!("chattr +i {}", c.data_file),
    }
}

fn gen_pkg(_c: &Context, r: &mut ChaCha8Rng) -> String {
    let p = pick(r, PACKAGES);
    match r.gen_range(0..4) {
        0 => format!("apt-get remove -y {p}"),
        1 => format!("yum remove -y {p}"),
        2 => format!("pip uninstall -y {p}"),
        _ => format!("apt-get install -y {p}"),
    }
}

fn gen_edit(c: &Context, r: &mut ChaCha8Rng) -> String {
    match r.gen_range(0..5) {
        0 => format!("sed -i 's/{}/{}/g' {}", c.word, pick(r, WORDS), c.data_file),
        1 => format!("truncate -s 0 {}", c.log_file),
        2 => format!("echo \"{}\" > {}", c.word, c.data_file),
        3 => format!("mv {} {}.{}", c.data_file, c.data_file, suffix(r)),
        _ => format!("dd if=/dev/zero of={} bs=1M count={}", c.data_file, r.gen_range(1..100)),
    }
}

fn gen_container_mut(c: &Context, r: &mut ChaCha8Rng) -> String {
    match r.gen_range(0..5) {
        0 => format!("docker rm -f {}", c.app),
        1 => format!("docker stop {}", c.app),
        2 => format!("kubectl delete pod {} -n {}", c.pod, c.namespace),
        3 => format!("kubectl scale deploy {} --replicas=0 -n {}", c.app, c.namespace),
        _ => "docker system prune -f".to_string(),
    }
}

fn gen_net_mut(c: &Context, r: &mut ChaCha8Rng) -> String {
    match r.gen_range(0..4) {
        0 => "iptables -F".to_string(),
        1 => format!("ip link set {} down", pick(r, IFACES)),
        2 => format!("ifdown {}", pick(r, IFACES)),
        _ => format!("iptables -A INPUT -s {} -j DROP", c.host),
    }
}

fn gen_user_mut(c: &Context, r: &mut ChaCha8Rng) -> String {
    match r.gen_range(0..4) {
        0 => format!("userdel {}", c.user),
        1 => format!("passwd -l {}", c.user),
        2 => format!("crontab -r -u {}", c.user),
        _ => "shutdown -r now".to_string(),
    }
}

fn gen_wipe_sysdir(_c: &Context, r: &mut ChaCha8Rng) -> String {
    let dir = pick(r, SYSTEM_DIRS);
    let cmd = match r.gen_range(0..6) {
        0 => format!("rm -rf {dir}/*"),
        1 => format!("rm -rf {dir}"),
        2 => format!("rm -fr {dir}/*"),
        3 => "rm -rf --no-preserve-root /".to_string(),
        4 => format!("rm -Rf {dir}/"),
        _ => format!("find {dir} -type f -delete"),
    };
    match r.gen_range(0..4) {
        0 => format!("time {cmd}"),
        1 => format!("sudo {cmd}"),
        _ => cmd,
    }
}

fn gen_disk_destroy(_c: &Context, r: &mut ChaCha8Rng) -> String {
    let disk = pick(r, DISKS);
    match r.gen_range(0..7) {
        0 => format!("dd if=/dev/zero of=/dev/{disk}"),
        1 => format!("dd if=/dev/urandom of=/dev/{disk} bs=1M"),
        2 => format!("mkfs.ext4 /dev/{disk}{}", r.gen_range(1..5)),
        3 => format!("mkfs -t xfs /dev/{disk}"),
        4 => format!("shred -n {} /dev/{disk}", r.gen_range(1..10)),
        5 => format!("wipefs -a /dev/{disk}"),
        _ => format!("cat /dev/zero > /dev/{disk}"),
    }
}

fn gen_system_sabotage(_c: &Context, r: &mut ChaCha8Rng) -> String {
    match r.gen_range(0..5) {
        0 => ":(){ :|:& };:".to_string(),
        1 => "chmod -R 000 /".to_string(),
        2 => "chown -R nobody:nogroup /".to_string(),
        3 => format!("mv {} /dev/null", pick(r, SYSTEM_DIRS)),
        _ => format!("ls {} | xargs rm -rf", pick(r, SYSTEM_DIRS)),
    }
}

pub static FAMILIES: &[Family] = &[
    Family { id: "list", label: RiskClass::Safe, generate: gen_list },
    Family { id: "grep", label: RiskClass::Safe, generate: gen_grep },
    Family { id: "view", label: RiskClass::Safe, generate: gen_view },
    Family { id: "service-status", label: RiskClass::Safe, generate: gen_status },
    Family { id: "system-info", label: RiskClass::Safe, generate: gen_sys },
    Family { id: "process-info", label: RiskClass::Safe, generate: gen_proc },
    Family { id: "network-info", label: RiskClass::Safe, generate: gen_net },
    Family { id: "echo", label: RiskClass::Safe, generate: gen_echo },
    Family { id: "navigate", label: RiskClass::Safe, generate: gen_nav },
    Family { id: "container-info", label: RiskClass::Safe, generate: gen_container_view },
    Family { id: "scoped-log-delete", label: RiskClass::Safe, generate: gen_delete_log },
    Family { id: "copy-archive", label: RiskClass::Safe, generate: gen_copy },
    Family { id: "git-read", label: RiskClass::Safe, generate: gen_git },
    Family { id: "find-read", label: RiskClass::Safe, generate: gen_find_view },
    Family { id: "service-restart", label: RiskClass::Risky, generate: gen_restart },
    Family { id: "kill-chain", label: RiskClass::Risky, generate: gen_kill },
    Family { id: "delete", label: RiskClass::Risky, generate: gen_delete },
    Family { id: "piped-delete", label: RiskClass::Risky, generate: gen_piped_delete },
    Family { id: "permissions", label: RiskClass::Risky, generate: gen_perm },
    Family { id: "packages", label: RiskClass::Risky, generate: gen_pkg },
    Family { id: "in-place-edit", label: RiskClass::Risky, generate: gen_edit },
    Family { id: "container-change", label: RiskClass::Risky, generate: gen_container_mut },
    Family { id: "network-change", label: RiskClass::Risky, generate: gen_net_mut },
    Family { id: "account-change", label: RiskClass::Risky, generate: gen_user_mut },
    Family { id: "force-delete-system-dir", label: RiskClass::Blocked, generate: gen_wipe_sysdir },
    Family { id: "disk-destroy", label: RiskClass::Blocked, generate: gen_disk_destroy },
    Family { id: "system-sabotage", label: RiskClass::Blocked, generate: gen_system_sabotage },
];

pub fn family(id: &str) -> Option<&'static Family> {
    FAMILIES.iter().find(|f| f.id == id)
}

fn families_of(label: RiskClass) -> Vec<&'static Family> {
    FAMILIES.iter().filter(|f| f.label == label).collect()
}

/// Class counts for `n` samples: every non-majority class gets
/// `floor(n * ratio)`, the majority class takes the remainder.
pub fn class_counts_for(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let majority = (0..3).fold(0, |best, i| if ratios[i] > ratios[best] { i } else { best });
    let mut counts = [0usize; 3];
    for i in 0..3 {
        if i != majority {
            counts[i] = (n as f64 * ratios[i] + 1e-9).floor() as usize;
        }
    }
    counts[majority] = n - counts.iter().sum::<usize>();
    counts
}

/// Generate `n` labeled commands with the requested class proportions.
///
/// Deterministic under `seed`. Identical command strings always carry the
/// same label: a collision with another class is regenerated.
pub fn generate_synthetic_dataset(n: usize, ratios: [f64; 3], seed: u64) -> Result<Vec<LabeledCommand>, DatasetError> {
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-6 || ratios.iter().any(|&r| r <= 0.0) {
        return Err(DatasetError::BadRatios(sum));
    }
    let min_ratio = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let min = (1.0 / min_ratio - 1e-9).ceil() as usize;
    if n < min {
        return Err(DatasetError::TooSmall { n, min });
    }
    let counts = class_counts_for(n, ratios);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen: HashMap<String, RiskClass> = HashMap::new();
    let mut out = Vec::with_capacity(n);
    for class in RiskClass::ALL {
        let fams = families_of(class);
        for _ in 0..counts[class.index()] {
            loop {
                let fam = fams.choose(&mut rng).expect("every class has families");
                let ctx = Context::random(&mut rng);
                let cmd = fam.generate(&ctx, &mut rng);
                match seen.get(&cmd) {
                    Some(&other) if other != class => continue,
                    _ => {}
                }
                seen.insert(cmd.clone(), class);
                out.push(LabeledCommand { command: cmd, label: class, provenance: Provenance::Template(fam.id.to_string()) });
                break;
            }
        }
    }
    out.shuffle(&mut rng);
    Ok(out)
}

/// Script archetypes: which families a script draws from.
const SCRIPT_KINDS: &[(&str, f64, &[&str])] = &[
    ("inspect", 0.30, &["list", "grep", "view", "service-status", "system-info", "process-info", "network-info", "navigate", "echo"]),
    ("deploy", 0.20, &["navigate", "git-read", "copy-archive", "service-restart", "service-status", "network-info", "echo", "permissions", "packages"]),
    ("cleanup", 0.18, &["find-read", "scoped-log-delete", "delete", "piped-delete", "in-place-edit", "list", "system-info", "echo"]),
    ("incident", 0.15, &["process-info", "kill-chain", "service-restart", "view", "grep", "service-status", "network-change"]),
    ("cluster", 0.13, &["container-info", "container-change", "echo", "navigate", "network-info"]),
    ("wreck", 0.04, &["force-delete-system-dir", "disk-destroy", "system-sabotage", "system-info", "account-change", "echo"]),
];

const SCRIPT_PREAMBLE: &[&str] = &["set -e", "set -euo pipefail", "cd \"$(dirname \"$0\")\"", "source /etc/profile"];

/// Generate `n` scripts of 3 to 12 commands. Commands within a script share
/// one `Context`, so they mention the same service, directories and process.
pub fn generate_synthetic_scripts(n: usize, seed: u64) -> Vec<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = SCRIPT_KINDS.iter().map(|k| k.1).collect();
    let dist = rand::distributions::WeightedIndex::new(&weights).expect("positive weights");
    (0..n)
        .map(|_| {
            let (_, _, fams) = SCRIPT_KINDS[rng.sample(&dist)];
            let ctx = Context::random(&mut rng);
            let len = rng.gen_range(3..=12);
            let mut cmds = Vec::with_capacity(len + 1);
            if rng.gen_bool(0.5) {
                cmds.push(pick(&mut rng, SCRIPT_PREAMBLE).to_string());
            }
            // Most scripts stay on one theme; a few wander.
            let local: Vec<&str> = fams.choose_multiple(&mut rng, 4.min(fams.len())).cloned().collect();
            for _ in 0..len {
                let id = if rng.gen_bool(0.85) { pick(&mut rng, &local) } else { pick(&mut rng, fams) };
                let fam = family(id).expect("kind references known family");
                cmds.push(fam.generate(&ctx, &mut rng));
            }
            cmds
        })
        .collect()
}

/// Render a generated script as shell text.
pub fn render_script(commands: &[String]) -> String {
    let mut out = String::from("#!/bin/bash\n");
    for c in commands {
        out.push_str(c);
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::class_counts;

    #[test]
    fn full_dataset_size_counts() {
        assert_eq!(class_counts_for(47158, DEFAULT_RATIOS), [37586, 9431, 141]);
    }

    #[test]
    fn generation_counts_and_determinism() {
        let a = generate_synthetic_dataset(2000, DEFAULT_RATIOS, 11).unwrap();
        assert_eq!(class_counts(&a), [1594, 400, 6]);
        let b = generate_synthetic_dataset(2000, DEFAULT_RATIOS, 11).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_dataset(2000, DEFAULT_RATIOS, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn too_small_for_rare_class() {
        assert!(matches!(generate_synthetic_dataset(333, DEFAULT_RATIOS, 1), Err(DatasetError::TooSmall { min: 334, .. })));
        assert!(generate_synthetic_dataset(334, DEFAULT_RATIOS, 1).is_ok());
        assert!(matches!(generate_synthetic_dataset(1000, [0.5, 0.4, 0.2], 1), Err(DatasetError::BadRatios(_))));
    }

    #[test]
    fn labels_consistent_per_string() {
        let data = generate_synthetic_dataset(20000, DEFAULT_RATIOS, 5).unwrap();
        let mut seen: HashMap<&str, RiskClass> = HashMap::new();
        for d in &data {
            if let Some(prev) = seen.insert(&d.command, d.label) {
                assert_eq!(prev, d.label, "{}", d.command);
            }
        }
    }

    #[test]
    fn force_delete_system_dir_above_safe() {
        let fam = family("force-delete-system-dir").unwrap();
        assert!(fam.label > RiskClass::Safe);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let ctx = Context::random(&mut rng);
            let cmd = fam.generate(&ctx, &mut rng);
            assert!(cmd.contains("rm -") || cmd.contains("-delete"), "{cmd}");
        }
    }

    #[test]
    fn scripts_are_deterministic_and_sized() {
        let a = generate_synthetic_scripts(50, 9);
        assert_eq!(a, generate_synthetic_scripts(50, 9));
        assert!(a.iter().all(|s| (3..=13).contains(&s.len())));
        let text = render_script(&a[0]);
        assert_eq!(crate::dataset::extract_commands(&text), a[0]);
    }
}
