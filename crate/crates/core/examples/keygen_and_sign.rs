//! Derive a key, sign a send, and watch verification catch tampering.

use acctshard::codec::{check_tx, keygen, sign_tx, Address, SendTx, SubchainTx, TxFault};

fn main() {
    let key = keygen(Some([7; 32])).expect("valid secret");
    println!("address      {}", key.address());

    let unsigned = SubchainTx::Send(SendTx {
        height: 1,
        current_address: key.address(),
        recipient_address: Address([0xab; 20]),
        amount: 1_250,
        timestamp: 1_700_000_000,
        ..Default::default()
    });
    let signed = sign_tx(&unsigned, &key).expect("key matches sender");
    println!("tx hash      {}", signed.tx_hash());
    println!("encoded      {} bytes", signed.encode().len());
    println!("check        {:?}", check_tx(&signed));

    let mut tampered = signed.clone();
    if let SubchainTx::Send(s) = &mut tampered {
        s.amount += 1;
    }
    assert_eq!(check_tx(&tampered), Err(TxFault::DigestMismatch));
    println!("tampered     {:?}", check_tx(&tampered));

    let stranger = keygen(Some([8; 32])).unwrap();
    let mut forged = signed.clone();
    if let SubchainTx::Send(s) = &mut forged {
        s.signature = stranger.sign_digest(&s.tx_hash);
    }
    assert_eq!(check_tx(&forged), Err(TxFault::BadSignature));
    println!("foreign sig  {:?}", check_tx(&forged));
}
