mod common;

use std::sync::Arc;

use mfaz::wire::{WireClient, WireServer};
use mfaz::{ClientAgent, GaVault, Operation, Reason, Resource, ResourceClass};

#[test]
fn hundred_chained_grants_in_process() {
    let server = common::server_with_rules(common::TOY_RULES);
    let r = common::liveness(&server, &server, 100);
    assert!(r.failures.is_empty(), "{:?}", r.failures);
    assert_eq!((r.grants, r.min_vault), (100, 3));
}

#[test]
fn hundred_chained_grants_over_tcp() {
    let server = Arc::new(common::server_with_rules(common::TOY_RULES));
    let handle = WireServer::bind("127.0.0.1:0", server.clone()).unwrap().spawn().unwrap();
    let client = WireClient::connect(handle.addr()).unwrap();
    let r = common::liveness(&client, &server, 100);
    assert!(r.failures.is_empty(), "{:?}", r.failures);
    assert_eq!(r.grants, 100);
    let (granted, min_vault) = common::agent_liveness(&client, &server, 100, 1);
    assert_eq!((granted, min_vault), (100, 3));
}

#[test]
fn vault_survives_client_restart() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gus.vault");
    let server = common::server_with_rules(common::TOY_RULES);
    let me = common::enroll_and_login(&server, "gus", None);
    let lobby = Resource::new("lobby", ResourceClass::Public).unwrap();
    {
        let mut vault = GaVault::open(&path, "gus").unwrap();
        vault.store(me.gas.clone()).unwrap();
        let mut agent = ClientAgent::new(me.user.clone(), vault, me.sid, Some(3));
        for _ in 0..5 {
            assert!(agent.request_access(&server, Operation::Read, &lobby, 1).unwrap().is_granted());
        }
    }
    let vault = GaVault::open(&path, "gus").unwrap();
    assert_eq!(vault.len(), 3);
    // the reloaded entries, old and newly derived alike, all verify
    let mut agent = ClientAgent::new(me.user.clone(), vault, me.sid, Some(4));
    assert!(agent.request_access(&server, Operation::Read, &lobby, 3).unwrap().is_granted());
    assert_eq!(GaVault::open(&path, "gus").unwrap().len(), 1);
}

#[test]
fn spent_gas_do_not_come_back_and_denials_keep_the_vault() {
    let server = common::server_with_rules(common::TOY_RULES);
    let me = common::enroll_and_login(&server, "hal", None);
    let mut vault = GaVault::in_memory("hal");
    vault.store(me.gas.clone()).unwrap();
    let mut agent = ClientAgent::new(me.user.clone(), vault, me.sid, Some(9));
    let lobby = Resource::new("lobby", ResourceClass::Public).unwrap();
    let lab = Resource::new("lab", ResourceClass::Private).unwrap();

    let before: Vec<_> = agent.vault.entries().to_vec();
    let d = agent.request_access(&server, Operation::Write, &lab, 2).unwrap();
    assert_eq!(d.reason, Reason::ArFail);
    assert_eq!(agent.vault.entries(), before.as_slice());

    for _ in 0..20 {
        assert!(agent.request_access(&server, Operation::Read, &lobby, 1).unwrap().is_granted());
    }
    for sent in agent.sent_digests() {
        assert!(!agent.vault.contains(sent));
    }
}
