//! The reference enterprise network shipped with the crate.
//!
//! Nine populated subnets hang off an empty internet subnet 0. A single VPN
//! gateway in subnet 4 is the only bridge between the front (DMZ and user
//! LAN) and the internal zones, so any route to the internal targets must
//! compromise at least one authentication host. Subnet 6 is a second
//! authentication-gated pocket: its file server is only visible after the
//! RADIUS box guarding it has been taken.

use std::collections::{BTreeMap, BTreeSet};

use crate::terrain::ServiceCategory;

use super::{FirewallRule, HostAddress, HostSpec, NetworkConfig};

/// Foothold assumed at the start of every episode.
pub const INITIAL_HOST: HostAddress = HostAddress(1, 0);

/// Hosts used as study targets throughout the shipped configs.
pub const TARGETS: [HostAddress; 3] = [HostAddress(3, 1), HostAddress(8, 2), HostAddress(9, 2)];

fn host(
    address: (usize, usize),
    os: &str,
    services: &[&str],
    processes: &[&str],
) -> HostSpec {
    HostSpec {
        address: HostAddress(address.0, address.1),
        services: services.iter().map(|s| s.to_string()).collect(),
        os: os.to_string(),
        processes: processes.iter().map(|p| p.to_string()).collect(),
        compromise_value: 0.0,
    }
}

fn rule(src: usize, dst: usize, allowed: &[&str]) -> FirewallRule {
    FirewallRule {
        src,
        dst,
        allowed_services: allowed.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>(),
    }
}

/// Builds the reference network. The same document ships as
/// `configs/reference_network.json`.
pub fn reference_network() -> NetworkConfig {
    let hosts = vec![
        // Subnet 1: DMZ.
        host(
            (1, 0),
            "linux",
            &[
                "http", "https", "smtp", "dns", "ssh", "ntp", "ftp", "webapp", "mail-relay",
                "nginx-admin", "monitoring",
            ],
            &["nginx", "cron"],
        ),
        host(
            (1, 1),
            "linux",
            &[
                "smtp", "imap", "pop3", "webmail", "dns", "ssh", "ntp", "av-console", "chat",
                "monitoring", "snmp",
            ],
            &["postfix", "cron"],
        ),
        host(
            (1, 2),
            "bsd",
            &["dns", "ntp", "ssh", "syslog", "snmp", "http", "ftp", "telnet"],
            &["named"],
        ),
        // Subnet 2: user LAN.
        host(
            (2, 0),
            "windows",
            &["ssh", "rdp", "chat", "printer-spool", "ntp", "time-tracker", "video-conf"],
            &["explorer", "office"],
        ),
        host(
            (2, 1),
            "windows",
            &[
                "smb-share", "printer-spool", "ssh", "ftp", "http", "backup-agent", "snmp",
                "ntp", "nfs", "syslog",
            ],
            &["backup", "indexer"],
        ),
        host((2, 2), "network-os", &["http", "dns", "ntp", "snmp", "chat"], &["hostapd"]),
        // Subnet 3: internal servers, first study target.
        host(
            (3, 0),
            "windows",
            &["ldap", "kerberos", "dns", "smb-share", "ntp", "ssh"],
            &["lsass", "dns-svc"],
        ),
        host(
            (3, 1),
            "linux",
            &[
                "http", "https", "tomcat", "webapp", "api-gateway", "ssh", "ntp", "monitoring",
                "log-viewer", "crm-app", "erp-app",
            ],
            &["java", "cron"],
        ),
        host(
            (3, 2),
            "linux",
            &["wiki", "http", "ssh", "ntp", "syslog", "dashboards", "ftp"],
            &["httpd"],
        ),
        // Subnet 4: the VPN gateway, sole bridge to the internal zones.
        host(
            (4, 0),
            "network-os",
            &["vpn-gateway", "radius", "ssh", "ntp", "syslog", "https"],
            &["openvpn"],
        ),
        // Subnet 5: core services.
        host(
            (5, 0),
            "linux",
            &["ssh", "rdp", "ntp", "monitoring", "telnet", "vnc"],
            &["sshd"],
        ),
        host(
            (5, 1),
            "linux",
            &[
                "jenkins", "gitlab", "ci-runner", "artifactory", "http", "ssh", "ntp",
                "docker-api", "redis", "webapp", "wiki",
            ],
            &["java", "docker"],
        ),
        host(
            (5, 2),
            "linux",
            &[
                "grafana", "elasticsearch", "kibana", "syslog", "snmp", "http", "ssh",
                "ids-sensor", "dashboards", "ntp",
            ],
            &["beats"],
        ),
        host(
            (5, 3),
            "linux",
            &[
                "erp-app", "crm-app", "http", "https", "ssh", "ntp", "api-gateway", "redis",
                "monitoring", "webapp",
            ],
            &["java", "cron"],
        ),
        // Subnet 6: secure operations pocket behind its own RADIUS gate.
        host((6, 0), "linux", &["radius", "ssh", "ntp", "syslog"], &["radiusd"]),
        host(
            (6, 1),
            "linux",
            &[
                "file-portal", "http", "ssh", "ftp", "ntp", "snmp", "printer-spool",
                "monitoring", "dashboards", "chat", "time-tracker",
            ],
            &["vsftpd", "cron"],
        ),
        host(
            (6, 2),
            "linux",
            &["syslog", "snmp", "ntp", "monitoring", "dashboards", "log-viewer"],
            &["collectd"],
        ),
        // Subnet 7: engineering.
        host(
            (7, 0),
            "linux",
            &[
                "http", "ssh", "ntp", "docker-api", "redis", "memcached", "k8s-api", "gitlab",
                "jenkins", "artifactory", "tomcat",
            ],
            &["docker", "java"],
        ),
        host(
            (7, 1),
            "linux",
            &["ssh", "ci-runner", "ntp", "monitoring", "http", "vnc", "log-viewer"],
            &["runner"],
        ),
        // Subnet 8: protected zone, second study target.
        host((8, 0), "windows", &["kerberos", "ldap", "ssh", "ntp"], &["lsass"]),
        host(
            (8, 1),
            "linux",
            &[
                "postgres", "backup-agent", "ssh", "ntp", "snmp", "syslog", "nfs", "smb-share",
                "monitoring", "log-viewer", "grafana",
            ],
            &["postgres-d"],
        ),
        host(
            (8, 2),
            "linux",
            &[
                "mysql", "s3-gateway", "http", "https", "ssh", "ntp", "backup-agent", "erp-app",
                "api-gateway", "monitoring", "log-viewer",
            ],
            &["mysqld", "cron"],
        ),
        host((8, 3), "linux", &["ssh", "rdp", "ntp"], &["sshd"]),
        // Subnet 9: innermost zone, third study target.
        host((9, 0), "linux", &["sso-portal", "ldap", "ssh", "ntp"], &["vault-d"]),
        host(
            (9, 1),
            "linux",
            &[
                "mongodb", "nfs", "ssh", "ntp", "backup-agent", "syslog", "monitoring",
                "smb-share", "snmp",
            ],
            &["mongod"],
        ),
        host(
            (9, 2),
            "linux",
            &[
                "mongodb", "s3-gateway", "https", "ssh", "ntp", "backup-agent",
                "siem-forwarder", "monitoring", "log-viewer", "crm-app",
            ],
            &["mongod", "cron"],
        ),
    ];

    let firewalls = vec![
        rule(0, 1, &["http", "https", "smtp", "dns"]),
        rule(1, 0, &["http", "https", "smtp", "dns"]),
        rule(
            1,
            2,
            &[
                "ssh", "rdp", "chat", "printer-spool", "http", "smb-share", "snmp", "dns",
                "ntp", "time-tracker", "video-conf", "ftp", "backup-agent", "nfs", "syslog",
            ],
        ),
        rule(2, 1, &["http", "https", "smtp", "imap", "webmail", "dns", "ssh"]),
        rule(1, 4, &["vpn-gateway", "https"]),
        rule(2, 4, &["vpn-gateway"]),
        rule(4, 1, &["dns", "http", "https", "ntp"]),
        rule(4, 2, &["ssh", "rdp"]),
        rule(
            4,
            5,
            &[
                "ssh", "rdp", "http", "jenkins", "gitlab", "grafana", "erp-app", "monitoring",
                "telnet", "vnc", "elasticsearch", "redis",
            ],
        ),
        rule(5, 4, &["radius", "syslog"]),
        rule(
            5,
            3,
            &[
                "http", "https", "tomcat", "ldap", "kerberos", "dns", "wiki", "api-gateway",
                "crm-app", "smb-share",
            ],
        ),
        rule(3, 5, &["ssh", "monitoring"]),
        rule(5, 6, &["radius"]),
        rule(6, 5, &["syslog", "monitoring"]),
        rule(
            5,
            7,
            &["ssh", "http", "docker-api", "gitlab", "ci-runner", "k8s-api", "monitoring", "vnc"],
        ),
        rule(7, 5, &["gitlab", "jenkins", "artifactory", "redis"]),
        rule(6, 7, &["ssh", "ci-runner", "http"]),
        rule(7, 6, &["radius"]),
        rule(6, 8, &["kerberos", "postgres", "mysql", "ssh"]),
        rule(7, 8, &["postgres", "mysql", "ssh", "ldap"]),
        rule(8, 6, &["radius"]),
        rule(8, 7, &["ci-runner"]),
        rule(8, 9, &["mongodb", "sso-portal", "https", "nfs"]),
        rule(9, 8, &["backup-agent", "syslog"]),
    ];

    let adjacency = vec![
        (0, 1),
        (1, 2),
        (1, 4),
        (2, 4),
        (3, 5),
        (4, 5),
        (5, 6),
        (5, 7),
        (6, 7),
        (6, 8),
        (7, 8),
        (8, 9),
    ];

    let service_catalog = service_catalog();

    NetworkConfig {
        subnets: vec![0, 3, 3, 3, 1, 4, 3, 2, 4, 3],
        hosts,
        firewalls,
        adjacency,
        service_catalog,
    }
}

fn service_catalog() -> BTreeMap<String, ServiceCategory> {
    use ServiceCategory::*;
    let entries: &[(&str, ServiceCategory)] = &[
        ("ldap", Authentication),
        ("kerberos", Authentication),
        ("vpn-gateway", Authentication),
        ("radius", Authentication),
        ("sso-portal", Authentication),
        ("smb-share", Data),
        ("backup-agent", Data),
        ("nfs", Data),
        ("postgres", Data),
        ("mysql", Data),
        ("s3-gateway", Data),
        ("mongodb", Data),
        ("syslog", Security),
        ("ids-sensor", Security),
        ("av-console", Security),
        ("siem-forwarder", Security),
        ("http", Common),
        ("https", Common),
        ("smtp", Common),
        ("dns", Common),
        ("ssh", Common),
        ("ntp", Common),
        ("ftp", Common),
        ("webapp", Common),
        ("mail-relay", Common),
        ("nginx-admin", Common),
        ("monitoring", Common),
        ("imap", Common),
        ("pop3", Common),
        ("webmail", Common),
        ("chat", Common),
        ("snmp", Common),
        ("telnet", Common),
        ("rdp", Common),
        ("printer-spool", Common),
        ("time-tracker", Common),
        ("video-conf", Common),
        ("tomcat", Common),
        ("api-gateway", Common),
        ("log-viewer", Common),
        ("crm-app", Common),
        ("erp-app", Common),
        ("wiki", Common),
        ("dashboards", Common),
        ("vnc", Common),
        ("jenkins", Common),
        ("gitlab", Common),
        ("ci-runner", Common),
        ("artifactory", Common),
        ("docker-api", Common),
        ("redis", Common),
        ("grafana", Common),
        ("elasticsearch", Common),
        ("kibana", Common),
        ("file-portal", Common),
        ("memcached", Common),
        ("k8s-api", Common),
    ];
    entries.iter().map(|(n, c)| (n.to_string(), *c)).collect()
}
